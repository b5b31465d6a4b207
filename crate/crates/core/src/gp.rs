//! Multigene genetic-programming symbolic regression.
//!
//! Candidate formulas are expression trees over the reduced-model features
//! and ephemeral constants. A model is an affine combination of one to four
//! genes whose bias and weights come from ordinary least squares, so the
//! evolution only has to discover tree *shapes*; fitness is the mean
//! absolute error on the training rows. Alongside the best model, the run
//! keeps a Pareto archive over (fitness, complexity), complexity being the
//! total node count.
//!
//! Every operator is protected and every node output is saturated to
//! +-1e150, which makes tree evaluation total on finite inputs: no inf or
//! NaN can escape a node.

use crate::error::{Error, Result};
use crate::tuning::{pdiv, pln, psqrt};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Output magnitude cap applied after every node evaluation.
pub const SATURATION: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Add,
    Sub,
    Mul,
    Pdiv,
    Psqrt,
    Abs,
    Sin,
    Cos,
    Tanh,
    Plog,
    Exp,
    Square,
    Qroot,
}

impl Op {
    pub const ALL: [Op; 13] = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Pdiv,
        Op::Psqrt,
        Op::Abs,
        Op::Sin,
        Op::Cos,
        Op::Tanh,
        Op::Plog,
        Op::Exp,
        Op::Square,
        Op::Qroot,
    ];

    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Pdiv => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Pdiv => "pdiv",
            Op::Psqrt => "psqrt",
            Op::Abs => "abs",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Plog => "plog",
            Op::Exp => "exp",
            Op::Square => "square",
            Op::Qroot => "qroot",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        let v = match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Pdiv => pdiv(a, b),
            Op::Psqrt => psqrt(a),
            Op::Abs => a.abs(),
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Tanh => a.tanh(),
            Op::Plog => pln(a),
            Op::Exp => a.exp(),
            Op::Square => a * a,
            Op::Qroot => a.abs().powf(0.25),
        };
        v.clamp(-SATURATION, SATURATION)
    }
}

/// Expression tree node. `Call` children always match the operator arity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Feature(usize),
    Const(f64),
    Call(Op, Vec<Expr>),
}

impl Expr {
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Feature(_) | Expr::Const(_) => 1,
            Expr::Call(_, ch) => 1 + ch.iter().map(Expr::node_count).sum::<usize>(),
        }
    }

    /// Levels from this node down; a single terminal has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Feature(_) | Expr::Const(_) => 1,
            Expr::Call(_, ch) => 1 + ch.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }
}

/// Total, protected, saturated evaluation.
pub fn eval_expr(e: &Expr, x: &[f64]) -> f64 {
    match e {
        Expr::Feature(i) => x[*i],
        Expr::Const(c) => *c,
        Expr::Call(op, ch) => {
            let a = eval_expr(&ch[0], x);
            let b = if ch.len() > 1 { eval_expr(&ch[1], x) } else { 0.0 };
            op.apply(a, b)
        }
    }
}

fn nth_subtree(e: &Expr, n: usize) -> &Expr {
    fn go<'a>(e: &'a Expr, n: &mut usize) -> Option<&'a Expr> {
        if *n == 0 {
            return Some(e);
        }
        *n -= 1;
        if let Expr::Call(_, ch) = e {
            for c in ch {
                if let Some(hit) = go(c, n) {
                    return Some(hit);
                }
            }
        }
        None
    }
    let mut k = n;
    go(e, &mut k).expect("subtree index within node count")
}

fn with_nth_replaced(e: &Expr, n: usize, repl: &Expr) -> Expr {
    fn go(e: &Expr, n: &mut isize, repl: &Expr) -> Expr {
        if *n == 0 {
            *n -= 1;
            return repl.clone();
        }
        *n -= 1;
        match e {
            Expr::Feature(_) | Expr::Const(_) => e.clone(),
            Expr::Call(op, ch) => Expr::Call(*op, ch.iter().map(|c| go(c, n, repl)).collect()),
        }
    }
    let mut k = n as isize;
    go(e, &mut k, repl)
}

/// Level (1 = root) at which preorder node `n` sits.
fn depth_of_nth(e: &Expr, n: usize) -> usize {
    fn go(e: &Expr, n: &mut usize, level: usize) -> Option<usize> {
        if *n == 0 {
            return Some(level);
        }
        *n -= 1;
        if let Expr::Call(_, ch) = e {
            for c in ch {
                if let Some(hit) = go(c, n, level + 1) {
                    return Some(hit);
                }
            }
        }
        None
    }
    let mut k = n;
    go(e, &mut k, 1).expect("subtree index within node count")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitMethod {
    Grow,
    Full,
}

fn random_terminal(rng: &mut ChaCha8Rng, n_features: usize) -> Expr {
    if rng.random::<f64>() < 2.0 / 3.0 {
        Expr::Feature(rng.random_range(0..n_features))
    } else {
        Expr::Const(rng.random_range(-2.0..=2.0))
    }
}

fn random_expr(
    rng: &mut ChaCha8Rng,
    budget: usize,
    method: InitMethod,
    n_features: usize,
    ops: &[Op],
) -> Expr {
    let terminal =
        budget <= 1 || (method == InitMethod::Grow && rng.random::<f64>() < 0.5);
    if terminal {
        return random_terminal(rng, n_features);
    }
    let op = ops[rng.random_range(0..ops.len())];
    let children =
        (0..op.arity()).map(|_| random_expr(rng, budget - 1, method, n_features, ops)).collect();
    Expr::Call(op, children)
}

/// Subtree exchange at explicit positions; used by [`crossover`] and kept
/// separate so the positional behavior is testable.
pub fn crossover_at(
    a: &Expr,
    b: &Expr,
    ia: usize,
    ib: usize,
    max_depth: usize,
) -> (Expr, Expr) {
    let sa = nth_subtree(a, ia);
    let sb = nth_subtree(b, ib);
    let ca = with_nth_replaced(a, ia, sb);
    let cb = with_nth_replaced(b, ib, sa);
    if ca.depth() > max_depth || cb.depth() > max_depth {
        // reject the pair rather than trim, so both results stay valid and
        // the parents' combined node count is conserved either way
        (a.clone(), b.clone())
    } else {
        (ca, cb)
    }
}

/// Random-point subtree exchange with depth-violation rejection.
pub fn crossover(a: &Expr, b: &Expr, max_depth: usize, rng: &mut ChaCha8Rng) -> (Expr, Expr) {
    let ia = rng.random_range(0..a.node_count());
    let ib = rng.random_range(0..b.node_count());
    crossover_at(a, b, ia, ib, max_depth)
}

/// Replaces one randomly chosen node with a fresh random subtree small
/// enough to respect the depth bound.
pub fn mutate(
    e: &Expr,
    max_depth: usize,
    n_features: usize,
    ops: &[Op],
    rng: &mut ChaCha8Rng,
) -> Expr {
    let i = rng.random_range(0..e.node_count());
    let level = depth_of_nth(e, i);
    let budget = max_depth + 1 - level;
    let fresh = random_expr(rng, budget, InitMethod::Grow, n_features, ops);
    with_nth_replaced(e, i, &fresh)
}

/// Affine combination of gene trees: `bias + sum(weights[i] * gene_i(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultigeneModel {
    pub genes: Vec<Expr>,
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl MultigeneModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for (g, w) in self.genes.iter().zip(&self.weights) {
            acc += w * eval_expr(g, x);
        }
        acc
    }

    pub fn complexity(&self) -> usize {
        self.genes.iter().map(Expr::node_count).sum()
    }

    /// Whole model as one infix formula.
    pub fn render(&self) -> String {
        let mut out = format!("{:?}", self.bias);
        for (g, w) in self.genes.iter().zip(&self.weights) {
            if *w < 0.0 {
                out.push_str(&format!(" - {:?}*{}", -*w, render_expr(g)));
            } else {
                out.push_str(&format!(" + {:?}*{}", *w, render_expr(g)));
            }
        }
        out
    }
}

/// Training data: `x[row]` is a feature vector, `y[row]` its target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpDataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl GpDataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid("dataset needs matching, nonempty x and y"));
        }
        let width = x[0].len();
        if width == 0 || x.iter().any(|row| row.len() != width) {
            return Err(Error::invalid("feature rows must share a nonzero width"));
        }
        Ok(GpDataset { x, y })
    }

    pub fn n_features(&self) -> usize {
        self.x[0].len()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Ordinary least squares of the targets on `[1, gene outputs]`; SVD keeps
/// rank-deficient designs well-defined (minimum-norm solution).
pub fn fit_gene_weights(genes: &[Expr], data: &GpDataset) -> (f64, Vec<f64>) {
    let outputs: Vec<Vec<f64>> =
        data.x.iter().map(|row| genes.iter().map(|g| eval_expr(g, row)).collect()).collect();
    fit_weights_from_outputs(&outputs, &data.y, genes.len())
}

fn fit_weights_from_outputs(outputs: &[Vec<f64>], y: &[f64], n_genes: usize) -> (f64, Vec<f64>) {
    let n = y.len();
    let design = DMatrix::from_fn(n, n_genes + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            outputs[r][c - 1]
        }
    });
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    match svd.solve(&rhs, 1e-12) {
        Ok(sol) if sol.iter().all(|v| v.is_finite()) => {
            (sol[0], sol.iter().skip(1).copied().collect())
        }
        _ => (y.iter().sum::<f64>() / n as f64, vec![0.0; n_genes]),
    }
}

/// Mean absolute prediction error over the dataset. Non-finite predictions
/// force an infinite fitness so such models never win selection.
pub fn fitness_mae(model: &MultigeneModel, data: &GpDataset) -> f64 {
    let mut acc = 0.0;
    for (row, target) in data.x.iter().zip(&data.y) {
        acc += (model.predict(row) - target).abs();
    }
    let mae = acc / data.len() as f64;
    if mae.is_finite() {
        mae
    } else {
        f64::INFINITY
    }
}

/// All points not dominated in (fitness, complexity), both minimized;
/// returned sorted by complexity with strictly decreasing fitness.
pub fn pareto_front(points: &[(f64, usize)]) -> Vec<(f64, usize)> {
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for &(f, c) in points {
        let entry = best.entry(c).or_insert(f);
        if f < *entry {
            *entry = f;
        }
    }
    let mut front = Vec::new();
    let mut cutoff = f64::INFINITY;
    for (&c, &f) in &best {
        if f < cutoff {
            front.push((f, c));
            cutoff = f;
        }
    }
    front
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub max_depth: usize,
    pub max_genes: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    pub function_set: Vec<Op>,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population: 500,
            generations: 100,
            tournament: 3,
            max_depth: 7,
            max_genes: 4,
            crossover_rate: 0.85,
            mutation_rate: 0.1,
            elitism: 2,
            function_set: Op::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::invalid("population must be at least 4"));
        }
        if self.generations == 0 {
            return Err(Error::invalid("need at least one generation"));
        }
        if self.tournament == 0 || self.tournament > self.population {
            return Err(Error::invalid("tournament size must be in 1..=population"));
        }
        if self.max_depth < 2 {
            return Err(Error::invalid("max_depth must be at least 2"));
        }
        if self.max_genes == 0 {
            return Err(Error::invalid("need at least one gene"));
        }
        if self.elitism >= self.population {
            return Err(Error::invalid("elitism must be below population"));
        }
        for (name, r) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.function_set.is_empty() {
            return Err(Error::invalid("function set must not be empty"));
        }
        Ok(())
    }
}

/// One archive member: the model, its rendered formula, and its coordinates
/// on the fitness/complexity plane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub expression: String,
    pub fitness: f64,
    pub complexity: usize,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub model: MultigeneModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpOutcome {
    pub best: MultigeneModel,
    pub best_fitness: f64,
    pub best_complexity: usize,
    /// Non-dominated (fitness, complexity) staircase, ascending complexity.
    pub archive: Vec<ParetoPoint>,
    /// Best fitness after the initial population and after each generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
    /// Every (fitness, complexity) pair ever evaluated, for audits.
    pub evaluated_points: Vec<(f64, usize)>,
    /// Deepest gene seen across the whole run.
    pub max_depth_seen: usize,
}

#[derive(Clone)]
struct Individual {
    genes: Vec<Expr>,
    bias: f64,
    weights: Vec<f64>,
    fitness: f64,
    complexity: usize,
}

fn evaluate_individual(genes: Vec<Expr>, data: &GpDataset) -> Individual {
    let outputs: Vec<Vec<f64>> =
        data.x.iter().map(|row| genes.iter().map(|g| eval_expr(g, row)).collect()).collect();
    let (bias, weights) = fit_weights_from_outputs(&outputs, &data.y, genes.len());
    let mut acc = 0.0;
    for (out_row, target) in outputs.iter().zip(&data.y) {
        let pred = bias + out_row.iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>();
        acc += (pred - target).abs();
    }
    let mae = acc / data.len() as f64;
    let complexity = genes.iter().map(Expr::node_count).sum();
    Individual {
        genes,
        bias,
        weights,
        fitness: if mae.is_finite() { mae } else { f64::INFINITY },
        complexity,
    }
}

fn rank_of(a: &Individual) -> (f64, usize) {
    (a.fitness, a.complexity)
}

/// Generational multigene GP run over one target column.
pub fn evolve(data: &GpDataset, cfg: &GpConfig) -> Result<GpOutcome> {
    cfg.validate()?;
    if data.len() <= cfg.max_genes {
        return Err(Error::invalid(format!(
            "need more rows ({}) than genes ({}) for the weight fit",
            data.len(),
            cfg.max_genes
        )));
    }
    let n_features = data.n_features();
    let ops = &cfg.function_set;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // ramped half-and-half over depths 2..=min(6, max_depth)
    let ramp_top = cfg.max_depth.min(6);
    let mut genomes: Vec<Vec<Expr>> = Vec::with_capacity(cfg.population);
    for i in 0..cfg.population {
        let n_genes = rng.random_range(1..=cfg.max_genes);
        let mut genes = Vec::with_capacity(n_genes);
        for g in 0..n_genes {
            let depth = 2 + (i + g) % (ramp_top - 1);
            let method = if (i + g) % 2 == 0 { InitMethod::Grow } else { InitMethod::Full };
            genes.push(random_expr(&mut rng, depth, method, n_features, ops));
        }
        genomes.push(genes);
    }

    let mut evaluations = 0usize;
    let mut evaluated_points: Vec<(f64, usize)> = Vec::new();
    let mut archive: BTreeMap<usize, Individual> = BTreeMap::new();
    let mut max_depth_seen = 0usize;

    let absorb =
        |pop: &[Individual],
         evaluations: &mut usize,
         evaluated_points: &mut Vec<(f64, usize)>,
         archive: &mut BTreeMap<usize, Individual>,
         max_depth_seen: &mut usize| {
            for ind in pop {
                *evaluations += 1;
                evaluated_points.push((ind.fitness, ind.complexity));
                for g in &ind.genes {
                    *max_depth_seen = (*max_depth_seen).max(g.depth());
                }
                let slot = archive.entry(ind.complexity);
                match slot {
                    std::collections::btree_map::Entry::Vacant(v) => {
                        v.insert(ind.clone());
                    }
                    std::collections::btree_map::Entry::Occupied(mut o) => {
                        if ind.fitness < o.get().fitness {
                            o.insert(ind.clone());
                        }
                    }
                }
            }
        };

    let mut pop: Vec<Individual> =
        genomes.into_par_iter().map(|genes| evaluate_individual(genes, data)).collect();
    absorb(&pop, &mut evaluations, &mut evaluated_points, &mut archive, &mut max_depth_seen);

    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| rank_of(&pop[a]).partial_cmp(&rank_of(&pop[b])).unwrap());
    let mut history = vec![pop[order[0]].fitness];

    for _ in 0..cfg.generations {
        let mut next_genomes: Vec<Vec<Expr>> = Vec::with_capacity(cfg.population);
        let survivors = cfg.population - cfg.elitism;
        while next_genomes.len() < survivors {
            let pick = |rng: &mut ChaCha8Rng| -> usize {
                let mut best = rng.random_range(0..pop.len());
                for _ in 1..cfg.tournament {
                    let c = rng.random_range(0..pop.len());
                    if rank_of(&pop[c]) < rank_of(&pop[best]) {
                        best = c;
                    }
                }
                best
            };
            let pa = pick(&mut rng);
            let pb = pick(&mut rng);
            let mut ga = pop[pa].genes.clone();
            let mut gb = pop[pb].genes.clone();
            if rng.random::<f64>() < cfg.crossover_rate {
                let ia = rng.random_range(0..ga.len());
                let ib = rng.random_range(0..gb.len());
                let (na, nb) = crossover(&ga[ia], &gb[ib], cfg.max_depth, &mut rng);
                ga[ia] = na;
                gb[ib] = nb;
            }
            for child in [&mut ga, &mut gb] {
                if rng.random::<f64>() < cfg.mutation_rate {
                    let i = rng.random_range(0..child.len());
                    child[i] = mutate(&child[i], cfg.max_depth, n_features, ops, &mut rng);
                }
            }
            next_genomes.push(ga);
            if next_genomes.len() < survivors {
                next_genomes.push(gb);
            }
        }

        let mut next: Vec<Individual> =
            next_genomes.into_par_iter().map(|genes| evaluate_individual(genes, data)).collect();
        absorb(&next, &mut evaluations, &mut evaluated_points, &mut archive, &mut max_depth_seen);

        // elites survive unchanged, so the best fitness cannot regress
        for &i in order.iter().take(cfg.elitism) {
            next.push(pop[i].clone());
        }
        debug_assert_eq!(next.len(), cfg.population);
        debug_assert!(next.iter().all(|ind| ind.genes.iter().all(|g| g.depth() <= cfg.max_depth)));

        pop = next;
        order = (0..pop.len()).collect();
        order.sort_by(|&a, &b| rank_of(&pop[a]).partial_cmp(&rank_of(&pop[b])).unwrap());
        history.push(pop[order[0]].fitness);
    }

    let best = &pop[order[0]];
    let front = {
        let mut out = Vec::new();
        let mut cutoff = f64::INFINITY;
        for ind in archive.values() {
            if ind.fitness < cutoff {
                cutoff = ind.fitness;
                let model = MultigeneModel {
                    genes: ind.genes.clone(),
                    bias: ind.bias,
                    weights: ind.weights.clone(),
                };
                out.push(ParetoPoint {
                    expression: model.render(),
                    fitness: ind.fitness,
                    complexity: ind.complexity,
                    bias: ind.bias,
                    weights: ind.weights.clone(),
                    model,
                });
            }
        }
        out
    };

    Ok(GpOutcome {
        best: MultigeneModel {
            genes: best.genes.clone(),
            bias: best.bias,
            weights: best.weights.clone(),
        },
        best_fitness: best.fitness,
        best_complexity: best.complexity,
        archive: front,
        history,
        evaluations,
        evaluated_points,
        max_depth_seen,
    })
}

/// Fully parenthesized infix rendering; [`parse_expr`] inverts it.
pub fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Feature(i) => format!("x{i}"),
        Expr::Const(c) => format!("{c:?}"),
        Expr::Call(op, ch) => match op {
            Op::Add => format!("({} + {})", render_expr(&ch[0]), render_expr(&ch[1])),
            Op::Sub => format!("({} - {})", render_expr(&ch[0]), render_expr(&ch[1])),
            Op::Mul => format!("({} * {})", render_expr(&ch[0]), render_expr(&ch[1])),
            Op::Pdiv => format!("pdiv({}, {})", render_expr(&ch[0]), render_expr(&ch[1])),
            _ => format!("{}({})", op.name(), render_expr(&ch[0])),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Ident(String),
    Number(f64),
}

fn tokenize(s: &str) -> Result<Vec<Token>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' => i += 1,
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '-' => {
                // a minus immediately glued to a digit is a number sign;
                // rendered binary subtraction always has a space after it
                if i + 1 < bytes.len() && (bytes[i + 1].is_ascii_digit() || bytes[i + 1] == b'.') {
                    let (tok, len) = lex_number(&s[i..])?;
                    out.push(tok);
                    i += len;
                } else {
                    out.push(Token::Minus);
                    i += 1;
                }
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let (tok, len) = lex_number(&s[i..])?;
                out.push(tok);
                i += len;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token::Ident(s[start..i].to_string()));
            }
            other => return Err(Error::invalid(format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

fn lex_number(s: &str) -> Result<(Token, usize)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    if bytes[0] == b'-' {
        i = 1;
    }
    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
        i += 1;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    let v: f64 = s[..i]
        .parse()
        .map_err(|_| Error::invalid(format!("bad number literal '{}'", &s[..i])))?;
    Ok((Token::Number(v), i))
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    n_features: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<&Token> {
        let t = self.tokens.get(self.pos).ok_or_else(|| Error::invalid("unexpected end of expression"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &Token) -> Result<()> {
        let got = self.next()?;
        if got != want {
            return Err(Error::invalid(format!("expected {want:?}, found {got:?}")));
        }
        Ok(())
    }

    fn parse(&mut self) -> Result<Expr> {
        match self.next()?.clone() {
            Token::Number(v) => Ok(Expr::Const(v)),
            Token::Ident(name) => {
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(idx) = rest.parse::<usize>() {
                        if idx >= self.n_features {
                            return Err(Error::invalid(format!(
                                "feature x{idx} out of range (have {})",
                                self.n_features
                            )));
                        }
                        return Ok(Expr::Feature(idx));
                    }
                }
                let op = Op::ALL
                    .iter()
                    .find(|o| o.name() == name)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("unknown function '{name}'")))?;
                self.expect(&Token::LParen)?;
                let first = self.parse()?;
                let expr = if op.arity() == 2 {
                    self.expect(&Token::Comma)?;
                    let second = self.parse()?;
                    Expr::Call(op, vec![first, second])
                } else {
                    Expr::Call(op, vec![first])
                };
                self.expect(&Token::RParen)?;
                Ok(expr)
            }
            Token::LParen => {
                let lhs = self.parse()?;
                let op = match self.next()? {
                    Token::Plus => Op::Add,
                    Token::Minus => Op::Sub,
                    Token::Star => Op::Mul,
                    other => {
                        return Err(Error::invalid(format!("expected + - or *, found {other:?}")))
                    }
                };
                let rhs = self.parse()?;
                self.expect(&Token::RParen)?;
                Ok(Expr::Call(op, vec![lhs, rhs]))
            }
            other => Err(Error::invalid(format!("unexpected token {other:?}"))),
        }
    }
}

/// Parses the output of [`render_expr`] back into a tree.
pub fn parse_expr(s: &str, n_features: usize) -> Result<Expr> {
    let tokens = tokenize(s)?;
    let mut p = Parser { tokens: &tokens, pos: 0, n_features };
    let expr = p.parse()?;
    if p.peek().is_some() {
        return Err(Error::invalid("trailing input after expression"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn bin(op: Op, a: Expr, b: Expr) -> Expr {
        Expr::Call(op, vec![a, b])
    }

    fn un(op: Op, a: Expr) -> Expr {
        Expr::Call(op, vec![a])
    }

    #[test]
    fn protected_evaluation_examples() {
        let add = bin(Op::Add, Expr::Feature(0), Expr::Feature(1));
        assert_eq!(eval_expr(&add, &[2.0, 3.0]), 5.0);
        let div = bin(Op::Pdiv, Expr::Feature(0), Expr::Feature(1));
        assert_eq!(eval_expr(&div, &[1.0, 0.0]), 0.0);
        let log = un(Op::Plog, Expr::Feature(0));
        assert_relative_eq!(eval_expr(&log, &[-5.0]), 5f64.ln());
        let root = un(Op::Qroot, Expr::Const(-16.0));
        assert_relative_eq!(eval_expr(&root, &[0.0]), 2.0);
    }

    #[test]
    fn saturation_keeps_towers_of_exp_finite() {
        let tower = un(Op::Exp, un(Op::Exp, un(Op::Exp, Expr::Feature(0))));
        let v = eval_expr(&tower, &[100.0]);
        assert!(v.is_finite());
        assert!(v <= SATURATION);
        let sq = un(Op::Square, Expr::Const(1e120));
        assert_eq!(eval_expr(&sq, &[0.0]), SATURATION);
    }

    #[test]
    fn random_trees_evaluate_finite_everywhere() {
        let mut r = rng(11);
        let probe: Vec<Vec<f64>> = vec![
            vec![0.0; 6],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![-1e9, 1e9, -0.5, 0.5, 1e-12, -1e-12],
        ];
        for _ in 0..500 {
            let e = random_expr(&mut r, 7, InitMethod::Grow, 6, &Op::ALL);
            assert!(e.depth() <= 7);
            for x in &probe {
                assert!(eval_expr(&e, x).is_finite());
            }
        }
    }

    #[test]
    fn crossover_conserves_nodes_and_depth() {
        let mut r = rng(5);
        for _ in 0..300 {
            let a = random_expr(&mut r, 6, InitMethod::Grow, 3, &Op::ALL);
            let b = random_expr(&mut r, 6, InitMethod::Full, 3, &Op::ALL);
            let total = a.node_count() + b.node_count();
            let (ca, cb) = crossover(&a, &b, 7, &mut r);
            assert_eq!(ca.node_count() + cb.node_count(), total);
            assert!(ca.depth() <= 7 && cb.depth() <= 7);
        }
    }

    #[test]
    fn self_crossover_at_matching_point_is_identity() {
        let mut r = rng(6);
        let t = random_expr(&mut r, 5, InitMethod::Full, 3, &Op::ALL);
        for i in 0..t.node_count() {
            let (a, b) = crossover_at(&t, &t, i, i, 7);
            assert_eq!(a, t);
            assert_eq!(b, t);
        }
    }

    #[test]
    fn mutation_respects_depth_and_changes_one_position() {
        let mut r = rng(7);
        for _ in 0..300 {
            let t = random_expr(&mut r, 7, InitMethod::Grow, 4, &Op::ALL);
            let m = mutate(&t, 7, 4, &Op::ALL, &mut r);
            assert!(m.depth() <= 7, "depth {} after mutation", m.depth());
            for x in &[vec![0.5; 4], vec![-2.0, 0.0, 2.0, 1e6]] {
                assert!(eval_expr(&m, x).is_finite());
            }
        }
    }

    fn toy_data() -> GpDataset {
        let x: Vec<Vec<f64>> =
            (0..12).map(|i| vec![i as f64 * 0.3 - 1.0, (i as f64).sin()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        GpDataset::new(x, y).unwrap()
    }

    #[test]
    fn weights_recover_an_identical_gene() {
        let data = toy_data();
        let (bias, w) = fit_gene_weights(&[Expr::Feature(0)], &data);
        assert_relative_eq!(bias, 0.0, epsilon = 1e-10);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-10);
        let model = MultigeneModel { genes: vec![Expr::Feature(0)], bias, weights: w };
        assert!(fitness_mae(&model, &data) < 1e-12);
    }

    #[test]
    fn zero_gene_gets_zero_weight_under_minimum_norm() {
        let data = toy_data();
        let genes = vec![Expr::Feature(0), Expr::Const(0.0)];
        let (_, w) = fit_gene_weights(&genes, &data);
        assert_relative_eq!(w[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn duplicate_genes_match_the_single_gene_fit() {
        let data = toy_data();
        let (b1, w1) = fit_gene_weights(&[Expr::Feature(1)], &data);
        let single = MultigeneModel { genes: vec![Expr::Feature(1)], bias: b1, weights: w1 };
        let dup_genes = vec![Expr::Feature(1), Expr::Feature(1)];
        let (b2, w2) = fit_gene_weights(&dup_genes, &data);
        let dup = MultigeneModel { genes: dup_genes, bias: b2, weights: w2 };
        for row in &data.x {
            assert_relative_eq!(single.predict(row), dup.predict(row), epsilon = 1e-8);
        }
    }

    #[test]
    fn least_squares_is_a_local_minimum() {
        let data = toy_data();
        let genes = vec![Expr::Feature(1), un(Op::Square, Expr::Feature(0))];
        let (bias, weights) = fit_gene_weights(&genes, &data);
        let sse = |b: f64, w: &[f64]| -> f64 {
            let m = MultigeneModel { genes: genes.clone(), bias: b, weights: w.to_vec() };
            data.x
                .iter()
                .zip(&data.y)
                .map(|(x, y)| (m.predict(x) - y).powi(2))
                .sum()
        };
        let base = sse(bias, &weights);
        for delta in [-1e-3, 1e-3] {
            assert!(sse(bias + delta, &weights) >= base - 1e-12);
            for i in 0..weights.len() {
                let mut w = weights.clone();
                w[i] += delta;
                assert!(sse(bias, &w) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn mae_examples() {
        let data = GpDataset::new(vec![vec![0.0], vec![0.0]], vec![1.0, 3.0]).unwrap();
        let constant2 =
            MultigeneModel { genes: vec![Expr::Const(1.0)], bias: 0.0, weights: vec![2.0] };
        assert_relative_eq!(fitness_mae(&constant2, &data), 1.0);

        // among constant predictors the median is the L1 minimizer
        let data5 =
            GpDataset::new(vec![vec![0.0]; 5], vec![1.0, 2.0, 4.0, 7.0, 20.0]).unwrap();
        let mae_of = |c: f64| {
            let m = MultigeneModel { genes: vec![Expr::Const(c)], bias: 0.0, weights: vec![1.0] };
            fitness_mae(&m, &data5)
        };
        let at_median = mae_of(4.0);
        for c in [1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0] {
            assert!(mae_of(c) >= at_median);
        }
    }

    #[test]
    fn pareto_front_examples_and_staircase_shape() {
        assert_eq!(pareto_front(&[(1.0, 5)]), vec![(1.0, 5)]);
        assert_eq!(pareto_front(&[(1.0, 5), (2.0, 3), (3.0, 4)]), vec![(2.0, 3), (1.0, 5)]);
        let mut r = rng(13);
        let pts: Vec<(f64, usize)> =
            (0..200).map(|_| (r.random::<f64>(), r.random_range(1..30))).collect();
        let front = pareto_front(&pts);
        for pair in front.windows(2) {
            assert!(pair[0].1 < pair[1].1);
            assert!(pair[0].0 > pair[1].0);
        }
        // brute-force audit
        for &(f, c) in &front {
            assert!(!pts
                .iter()
                .any(|&(f2, c2)| f2 <= f && c2 <= c && (f2 < f || c2 < c)));
        }
    }

    #[test]
    fn render_parse_round_trip_is_exact() {
        let mut r = rng(21);
        for _ in 0..300 {
            let t = random_expr(&mut r, 6, InitMethod::Grow, 6, &Op::ALL);
            let s = render_expr(&t);
            let back = parse_expr(&s, 6).unwrap();
            assert_eq!(back, t, "round trip changed {s}");
            for x in &[vec![0.3; 6], vec![-1.5, 2.0, 0.0, 1e4, -3.0, 0.25]] {
                let a = eval_expr(&t, x);
                let b = eval_expr(&back, x);
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "{s}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn parser_rejects_malformed_input() {
        assert!(parse_expr("x9", 6).is_err());
        assert!(parse_expr("(x1 +", 6).is_err());
        assert!(parse_expr("frob(x1)", 6).is_err());
        assert!(parse_expr("x1 x2", 6).is_err());
        assert!(parse_expr("pdiv(x1)", 6).is_err());
    }

    fn planted_sum_data(rows: usize, seed: u64) -> GpDataset {
        let mut r = rng(seed);
        let x: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..4).map(|_| r.random_range(-3.0..3.0)).collect())
            .collect();
        let y = x.iter().map(|row| row[1] + row[2]).collect();
        GpDataset::new(x, y).unwrap()
    }

    #[test]
    fn evolve_recovers_a_planted_sum() {
        let data = planted_sum_data(50, 99);
        let cfg = GpConfig { population: 120, generations: 25, seed: 4, ..GpConfig::default() };
        let out = evolve(&data, &cfg).unwrap();
        assert!(out.best_fitness < 1e-6, "best MAE {}", out.best_fitness);
        for w in out.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(out.max_depth_seen <= cfg.max_depth);
        assert_eq!(out.history.len(), cfg.generations + 1);
        assert_eq!(
            out.evaluations,
            cfg.population + cfg.generations * (cfg.population - cfg.elitism)
        );
    }

    #[test]
    fn archive_survives_a_brute_force_audit() {
        let data = planted_sum_data(30, 17);
        let cfg = GpConfig { population: 40, generations: 10, seed: 2, ..GpConfig::default() };
        let out = evolve(&data, &cfg).unwrap();
        let audit = pareto_front(&out.evaluated_points);
        let got: Vec<(f64, usize)> =
            out.archive.iter().map(|p| (p.fitness, p.complexity)).collect();
        assert_eq!(got, audit);
        for p in &out.archive {
            assert!(!out
                .evaluated_points
                .iter()
                .any(|&(f, c)| f <= p.fitness && c <= p.complexity && (f < p.fitness || c < p.complexity)));
            // the stored model reproduces the archived fitness
            assert_relative_eq!(fitness_mae(&p.model, &data), p.fitness, max_relative = 1e-9);
        }
    }

    #[test]
    fn evolve_is_deterministic_per_seed() {
        let data = planted_sum_data(25, 3);
        let cfg = GpConfig { population: 30, generations: 6, seed: 77, ..GpConfig::default() };
        let a = evolve(&data, &cfg).unwrap();
        let b = evolve(&data, &cfg).unwrap();
        assert_eq!(a.best_fitness.to_bits(), b.best_fitness.to_bits());
        assert_eq!(a.history, b.history);
        let ea: Vec<String> = a.archive.iter().map(|p| p.expression.clone()).collect();
        let eb: Vec<String> = b.archive.iter().map(|p| p.expression.clone()).collect();
        assert_eq!(ea, eb);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = GpConfig { population: 2, ..GpConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = GpConfig { tournament: 0, ..GpConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = GpConfig { function_set: vec![], ..GpConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = GpConfig { crossover_rate: 1.5, ..GpConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(GpConfig::default().validate().is_ok());
    }

    #[test]
    fn model_render_shows_affine_structure() {
        let m = MultigeneModel {
            genes: vec![bin(Op::Add, Expr::Feature(0), Expr::Feature(1)), Expr::Feature(2)],
            bias: 0.5,
            weights: vec![1.25, -0.75],
        };
        let s = m.render();
        assert_eq!(s, "0.5 + 1.25*(x0 + x1) - 0.75*x2");
    }
}
