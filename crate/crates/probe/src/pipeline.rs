//! End-to-end driver: data, model, explainers, metrics, bounds, verification.
//!
//! Per-node work runs on a rayon pool. Every stochastic step draws from a
//! stream derived from the global seed and the node (and method), and rows
//! are collected in node order, so the worker count never changes the output.

use std::collections::BTreeMap;

use log::warn;
use probe_core::bounds::{
    faithfulness_bound, grad_cf_bound, grad_stability_bound, graphlime_bound, graphmask_bound, group_fairness_bound_from, group_fairness_label_bound,
    worst_case_bound, BoundValue, LimeBounder, LimeVariant, Theorem,
};
use probe_core::explain::graphlime::graphlime;
use probe_core::explain::{graphmask_train, pgexplainer_train, ExplainContext, Method, TrainedExplainers};
use probe_core::explanation::Explanation;
use probe_core::gnn::lipschitz::{gradient_constant, lipschitz_profile, GradientConstant, LipschitzProfile};
use probe_core::gnn::model::Architecture;
use probe_core::gnn::train::{accuracy, train, TrainOutcome};
use probe_core::gnn::{concatenated_embedding, forward, input_gradient, GnnModel};
use probe_core::graph::{generate_synthetic, load_graph, Graph};
use probe_core::metrics::{
    counterfactual_fairness_mismatch, group_fairness_from, instability, prediction_gap, unfaithfulness, FairnessPool,
};
use probe_core::perturb::{perturbation_set, PerturbationSet};
use probe_core::rng::{node_stream, stream, Stream};
use probe_core::scalar::dist2;
use probe_core::subgraph::{computation_subgraph, counterfactual_node, ComputationSubgraph};
use probe_core::{ProbeError, Result as CoreResult};
use rayon::prelude::*;

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::HarnessError;
use crate::report::{CellRow, ReliabilityReport, RunMetadata};

pub type Graph64 = Graph<f64>;
pub type Model64 = GnnModel<f64>;

/// Gradient norm used by the gradient bounds.
const GRADIENT_P: f64 = 2.0;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Graph64, HarnessError> {
    let g = match &cfg.dataset {
        DatasetConfig::Synthetic(spec) => generate_synthetic(spec, cfg.split)?,
        DatasetConfig::Csv(c) => load_graph(&c.features, &c.edges, &c.labels, c.sensitive_column, cfg.split)?,
    };
    Ok(g)
}

pub fn architecture(cfg: &ExperimentConfig, graph: &Graph64) -> Architecture {
    Architecture::uniform(graph.feature_dim(), cfg.model.hidden_dim, cfg.model.layers, graph.class_count())
}

pub fn init_model(cfg: &ExperimentConfig, graph: &Graph64) -> Result<Model64, HarnessError> {
    Ok(GnnModel::init(&architecture(cfg, graph), &mut stream(cfg.model.seed, Stream::Init))?)
}

pub fn train_model(cfg: &ExperimentConfig, graph: &Graph64) -> Result<TrainOutcome<f64>, HarnessError> {
    let init = init_model(cfg, graph)?;
    Ok(train(&init, graph, &cfg.train)?)
}

/// A checkpoint must match the dataset and the configured architecture.
pub fn check_model(cfg: &ExperimentConfig, graph: &Graph64, model: &Model64) -> Result<(), HarnessError> {
    let expected = architecture(cfg, graph);
    let found = model.architecture();
    if expected != found {
        return Err(HarnessError::Config(format!(
            "checkpoint architecture {:?}/{} does not match dataset and config {:?}/{}",
            found.widths, found.class_count, expected.widths, expected.class_count
        )));
    }
    Ok(())
}

/// Fits the explainers that need training, only if they are selected.
pub fn fit_explainers(cfg: &ExperimentConfig, graph: &Graph64, model: &Model64) -> Result<TrainedExplainers<f64>, HarnessError> {
    let mut trained = TrainedExplainers::default();
    let layers = model.layer_count();
    let candidates: Vec<usize> = graph
        .train_nodes()
        .into_iter()
        .filter(|&u| !graph.neighbors(u).is_empty())
        .collect();
    if cfg.methods.contains(&Method::GraphMask) {
        let subs = candidates
            .iter()
            .take(cfg.explainers.graphmask.max_train_nodes.max(1))
            .map(|&u| computation_subgraph(graph, u, layers))
            .collect::<CoreResult<Vec<_>>>()?;
        trained.graphmask = Some(graphmask_train(model, subs, &cfg.explainers.graphmask, &mut stream(cfg.seed, Stream::GraphMask))?);
    }
    if cfg.methods.contains(&Method::PgExplainer) {
        trained.pgexplainer = Some(pgexplainer_train(
            model,
            graph,
            &candidates,
            &cfg.explainers.pgexplainer,
            &mut stream(cfg.seed, Stream::PgExplainer),
        )?);
    }
    Ok(trained)
}

/// Explicit list, else the configured list, else the first test nodes.
pub fn evaluation_nodes(cfg: &ExperimentConfig, graph: &Graph64, requested: Option<&[usize]>) -> Result<Vec<usize>, HarnessError> {
    let mut nodes = match (requested, &cfg.selection.nodes) {
        (Some(r), _) => r.to_vec(),
        (None, Some(c)) => c.clone(),
        (None, None) => graph.test_nodes().into_iter().take(cfg.selection.max_nodes).collect(),
    };
    if let Some(&bad) = nodes.iter().find(|&&u| u >= graph.node_count()) {
        return Err(HarnessError::Config(format!("node {bad} outside 0..{}", graph.node_count())));
    }
    nodes.sort_unstable();
    nodes.dedup();
    Ok(nodes)
}

fn method_index(method: Method) -> usize {
    Method::ALL.iter().position(|&m| m == method).expect("every method is listed")
}

fn cell_key(node: usize, method: Method) -> usize {
    node * Method::ALL.len() + method_index(method)
}

/// Explanation of a node's own computation subgraph; the stream depends only
/// on the seed, the node and the method.
pub fn explain_original(ctx: &ExplainContext<'_, f64>, cfg: &ExperimentConfig, method: Method, sub: &ComputationSubgraph<f64>) -> CoreResult<Explanation<f64>> {
    let mut rng = node_stream(cfg.seed, Stream::Explainer, cell_key(sub.target(), method));
    ctx.explain(method, sub, cfg.p, &mut rng)
}

fn run_pool<R: Send>(workers: usize, job: impl FnOnce() -> R + Send) -> Result<R, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(job))
}

/// One explanation cell; a failure carries its error message.
pub type ExplainedCell = (usize, Method, Result<Explanation<f64>, String>);

/// Computes explanations for `nodes × methods`.
pub fn explain_nodes(
    cfg: &ExperimentConfig,
    graph: &Graph64,
    model: &Model64,
    trained: &TrainedExplainers<f64>,
    nodes: &[usize],
) -> Result<Vec<ExplainedCell>, HarnessError> {
    let ctx = ExplainContext {
        model,
        graph,
        settings: &cfg.explainers,
        trained,
    };
    let layers = model.layer_count();
    run_pool(cfg.workers, || {
        nodes
            .par_iter()
            .flat_map_iter(|&u| {
                let sub = computation_subgraph(graph, u, layers);
                cfg.methods.iter().map(move |&m| {
                    let out = match &sub {
                        Ok(s) => explain_original(&ctx, cfg, m, s).map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    (u, m, out)
                }).collect::<Vec<_>>()
            })
            .collect()
    })
}

/// Shared read-only state of one evaluation.
struct Evaluation<'a> {
    cfg: &'a ExperimentConfig,
    graph: &'a Graph64,
    model: &'a Model64,
    ctx: ExplainContext<'a, f64>,
    profile: LipschitzProfile,
    gradient: GradientConstant,
    pool: Result<FairnessPool<f64>, String>,
    provided: Option<&'a BTreeMap<(usize, Method), Explanation<f64>>>,
}

type Pairs = Vec<(f64, BoundValue)>;

impl Evaluation<'_> {
    fn original(&self, method: Method, sub: &ComputationSubgraph<f64>) -> CoreResult<Explanation<f64>> {
        if let Some(e) = self.provided.and_then(|p| p.get(&(sub.target(), method))) {
            return Ok(e.clone());
        }
        explain_original(&self.ctx, self.cfg, method, sub)
    }

    fn sensitive(&self) -> CoreResult<usize> {
        self.graph.sensitive_index().ok_or(ProbeError::SensitiveUnset)
    }

    fn cell(&self, method: Method, set: &PerturbationSet<f64>) -> CellRow {
        let cfg = self.cfg;
        let sub = &set.original;
        let u = sub.target();
        let mut row = CellRow::new(u, method.tag());
        let explanation = match self.original(method, sub) {
            Ok(e) => e,
            Err(e) => {
                let reason = format!("explanation unavailable: {e}");
                warn!("node {u} {method}: {reason}");
                for name in self.enabled_metrics() {
                    row.skipped.insert(name.to_string(), reason.clone());
                }
                return row;
            }
        };
        let mut rng = node_stream(cfg.seed, Stream::ExplainerPerturbed, cell_key(u, method));
        let toggles = &cfg.metrics;

        if toggles.unfaithfulness {
            let r = (|| -> CoreResult<()> {
                let value = unfaithfulness(self.model, &explanation, set)?;
                row.metrics.insert("unfaithfulness".into(), value);
                row.diagnostics.insert("worst_case_gap".into(), worst_case_bound(self.model, set, &explanation)?);
                if toggles.bounds {
                    let mut b = faithfulness_bound(&self.profile, &explanation, sub, set.size())?;
                    b.worst_case = row.diagnostics.get("worst_case_gap").copied();
                    row.add_check(b.theorem, "unfaithfulness", vec![(value, b)], cfg.tol);
                }
                Ok(())
            })();
            if let Err(e) = r {
                row.skipped.insert("unfaithfulness".into(), e.to_string());
            }
        }

        if toggles.instability {
            let perturbed: Vec<CoreResult<Explanation<f64>>> = set
                .perturbed
                .iter()
                .map(|m| self.ctx.explain(method, m, cfg.p, &mut rng))
                .collect();
            let r = (|| -> CoreResult<()> {
                let mut total = 0.0;
                for e in &perturbed {
                    let e = e.as_ref().map_err(|e| ProbeError::InvalidParameter(e.to_string()))?;
                    total += instability(&explanation, e)?;
                }
                row.metrics.insert("instability".into(), total / perturbed.len() as f64);
                Ok(())
            })();
            if let Err(e) = r {
                row.skipped.insert("instability".into(), e.to_string());
            }
            if toggles.bounds {
                self.stability_checks(method, set, &mut row);
            }
        }

        if toggles.counterfactual {
            let r = (|| -> CoreResult<()> {
                let s = self.sensitive()?;
                let cf = counterfactual_node(sub, Some(s))?;
                let cf_expl = self.ctx.explain(method, &cf, cfg.p, &mut rng)?;
                row.metrics.insert("cf_mismatch".into(), counterfactual_fairness_mismatch(&explanation, &cf_expl)?);
                row.diagnostics.insert("cf_prediction_gap".into(), prediction_gap(self.model, sub, &cf)?);
                if toggles.bounds {
                    self.counterfactual_checks(method, sub, &cf, s, &mut row);
                }
                Ok(())
            })();
            if let Err(e) = r {
                row.skipped.insert("cf_mismatch".into(), e.to_string());
            }
        }

        if toggles.group_fairness {
            let r = (|| -> CoreResult<()> {
                let pool = self.pool.as_ref().map_err(|e| ProbeError::InvalidParameter(e.clone()))?;
                let masked = pool.masked(self.model, &explanation)?;
                row.metrics.insert(
                    "group_fairness_mismatch".into(),
                    group_fairness_from(&pool.sensitive, &pool.plain, &masked)?,
                );
                if toggles.bounds {
                    let b = group_fairness_bound_from(&pool.sensitive, &pool.plain, &masked)?;
                    let v = row.metrics["group_fairness_mismatch"];
                    row.diagnostics.insert(
                        "group_fairness_label_bound".into(),
                        group_fairness_label_bound(&pool.sensitive, &pool.plain, &masked)?,
                    );
                    row.add_check(Theorem::T8, "group_fairness_mismatch", vec![(v, b)], cfg.tol);
                }
                Ok(())
            })();
            if let Err(e) = r {
                row.skipped.insert("group_fairness_mismatch".into(), e.to_string());
            }
        }
        row
    }

    fn enabled_metrics(&self) -> Vec<&'static str> {
        let t = &self.cfg.metrics;
        [
            (t.unfaithfulness, "unfaithfulness"),
            (t.instability, "instability"),
            (t.counterfactual, "cf_mismatch"),
            (t.group_fairness, "group_fairness_mismatch"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect()
    }

    fn record(&self, row: &mut CellRow, theorem: Theorem, metric: &str, pairs: CoreResult<Pairs>) {
        match pairs {
            Ok(p) => row.add_check(theorem, metric, p, self.cfg.tol),
            Err(e) => {
                row.skipped.insert(format!("{metric}:{theorem}"), e.to_string());
            }
        }
    }

    fn stability_checks(&self, method: Method, set: &PerturbationSet<f64>, row: &mut CellRow) {
        let sub = &set.original;
        match method {
            Method::VanillaGrad => {
                let pairs = (|| -> CoreResult<Pairs> {
                    let trace = forward(self.model, sub)?;
                    let label = trace.prediction();
                    let g0 = input_gradient(self.model, sub, label)?;
                    set.perturbed
                        .iter()
                        .map(|m| {
                            let g1 = input_gradient(self.model, m, label)?;
                            let b = grad_stability_bound(&self.gradient, &trace.probs, label, sub.target_features(), m.target_features())?;
                            Ok((dist2(&g0, &g1), b))
                        })
                        .collect()
                })();
                self.record(row, Theorem::T2, "gradient_difference", pairs);
            }
            Method::GraphMask => {
                let pairs = set
                    .perturbed
                    .iter()
                    .map(|m| self.gate_pairs(sub, m, false))
                    .collect::<CoreResult<Vec<_>>>()
                    .map(|v| v.into_iter().flatten().collect());
                self.record(row, Theorem::T3, "gate_logit_difference", pairs);
            }
            Method::GraphLime => {
                let (mut worst_w, mut worst_gram, mut ill): (f64, f64, bool) = (0.0, 0.0, false);
                let pairs = (|| -> CoreResult<Pairs> {
                    let (_, base) = graphlime(self.model, sub, &self.cfg.explainers.graphlime, self.cfg.p)?;
                    let mut bounder = LimeBounder::new(&base, self.cfg.gram_ridge);
                    set.perturbed
                        .iter()
                        .zip(&set.noise_records)
                        .map(|(m, rec)| {
                            let (_, other) = graphlime(self.model, m, &self.cfg.explainers.graphlime, self.cfg.p)?;
                            let b = bounder.bound(Some(rec), None, LimeVariant::Stability)?;
                            worst_w = worst_w.max(b.max_w_residual());
                            worst_gram = worst_gram.max(b.max_gram_residual());
                            ill |= b.ill_conditioned();
                            Ok((dist2(&base.beta, &other.beta), b.bound))
                        })
                        .collect()
                })();
                if pairs.is_ok() {
                    row.diagnostics.insert("max_w_residual".into(), worst_w);
                    row.diagnostics.insert("max_gram_residual".into(), worst_gram);
                    if ill {
                        warn!("node {} graphlime: ill-conditioned inversion (condition > 1e12)", row.node);
                        row.diagnostics.insert("ill_conditioned".into(), 1.0);
                    }
                }
                self.record(row, Theorem::T4, "coefficient_difference", pairs);
            }
            _ => {}
        }
    }

    fn counterfactual_checks(&self, method: Method, sub: &ComputationSubgraph<f64>, cf: &ComputationSubgraph<f64>, s: usize, row: &mut CellRow) {
        match method {
            Method::VanillaGrad => {
                let pairs = (|| -> CoreResult<Pairs> {
                    let trace = forward(self.model, sub)?;
                    let label = trace.prediction();
                    let g0 = input_gradient(self.model, sub, label)?;
                    let g1 = input_gradient(self.model, cf, label)?;
                    Ok(vec![(dist2(&g0, &g1), grad_cf_bound(&self.gradient, &trace.probs, label)?)])
                })();
                self.record(row, Theorem::T5, "cf_gradient_difference", pairs);
            }
            Method::GraphMask => {
                let pairs = self.gate_pairs(sub, cf, true);
                self.record(row, Theorem::T6, "cf_gate_logit_difference", pairs);
            }
            Method::GraphLime => {
                let pairs = (|| -> CoreResult<Pairs> {
                    let (_, base) = graphlime(self.model, sub, &self.cfg.explainers.graphlime, self.cfg.p)?;
                    let (_, other) = graphlime(self.model, cf, &self.cfg.explainers.graphlime, self.cfg.p)?;
                    let eta = cf.target_features()[s] - sub.target_features()[s];
                    let b = graphlime_bound::<f64>(&base, None, Some((s, eta)), LimeVariant::Counterfactual, self.cfg.gram_ridge)?;
                    row.diagnostics.insert("cf_max_w_residual".into(), b.max_w_residual());
                    row.diagnostics.insert("cf_max_gram_residual".into(), b.max_gram_residual());
                    Ok(vec![(dist2(&base.beta, &other.beta), b.bound)])
                })();
                self.record(row, Theorem::T7, "cf_coefficient_difference", pairs);
            }
            _ => {}
        }
    }

    /// One pair per layer and per neighbor shared by both subgraphs.
    fn gate_pairs(&self, a: &ComputationSubgraph<f64>, b: &ComputationSubgraph<f64>, counterfactual: bool) -> CoreResult<Pairs> {
        let erasure = self
            .ctx
            .trained
            .graphmask
            .as_ref()
            .ok_or_else(|| ProbeError::InvalidParameter("graphmask has not been trained".into()))?;
        let (ta, tb) = (forward(self.model, a)?, forward(self.model, b)?);
        let nb = b.target_neighbors();
        let shared: Vec<usize> = a.target_neighbors().into_iter().filter(|v| nb.binary_search(v).is_ok()).collect();
        if shared.is_empty() {
            return Err(ProbeError::IsolatedNode(a.target()));
        }
        let mut out = Vec::new();
        for l in 0..erasure.layer_count() {
            for &v in &shared {
                let q = concatenated_embedding(&ta, a, v, l)?;
                let r = concatenated_embedding(&tb, b, v, l)?;
                let gap = (erasure.layers[l].z(&q) - erasure.layers[l].z(&r)).abs();
                out.push((gap, graphmask_bound(erasure, &q, &r, l, counterfactual)?));
            }
        }
        Ok(out)
    }
}

/// Everything an evaluation needs besides the configuration.
pub struct Artifacts<'a> {
    pub graph: &'a Graph64,
    pub model: &'a Model64,
    pub trained: &'a TrainedExplainers<f64>,
    /// Precomputed explanations of the evaluated nodes, keyed by (node, method).
    pub provided: Option<&'a BTreeMap<(usize, Method), Explanation<f64>>>,
}

pub fn evaluate(cfg: &ExperimentConfig, art: &Artifacts<'_>, nodes: &[usize]) -> Result<ReliabilityReport, HarnessError> {
    let (graph, model) = (art.graph, art.model);
    check_model(cfg, graph, model)?;
    let layers = model.layer_count();
    let profile = lipschitz_profile(model);
    let gradient = gradient_constant(model, GRADIENT_P)?;

    // perturbation sets of evaluated and pooled nodes, each from its own stream
    let pool_nodes: Vec<usize> = if cfg.metrics.group_fairness {
        let test = graph.test_nodes();
        let take = cfg.selection.max_pool_nodes.unwrap_or(test.len());
        test.into_iter().take(take).collect()
    } else {
        Vec::new()
    };
    let mut wanted: Vec<usize> = nodes.iter().chain(&pool_nodes).copied().collect();
    wanted.sort_unstable();
    wanted.dedup();
    let sets: BTreeMap<usize, Result<PerturbationSet<f64>, String>> = run_pool(cfg.workers, || {
        wanted
            .par_iter()
            .map(|&u| {
                let set = computation_subgraph(graph, u, layers).and_then(|sub| {
                    let mut rng = node_stream(cfg.seed, Stream::Perturbation, u);
                    perturbation_set(graph, &sub, model, cfg.k, &cfg.perturbation, &mut rng)
                });
                (u, set.map_err(|e| e.to_string()))
            })
            .collect()
    })?;

    let pool = if cfg.metrics.group_fairness {
        match graph.sensitive_index() {
            None => Err("no sensitive column configured".to_string()),
            Some(s) => {
                let members: Vec<ComputationSubgraph<f64>> = pool_nodes
                    .iter()
                    .filter_map(|u| sets[u].as_ref().ok())
                    .flat_map(|set| set.members().cloned())
                    .collect();
                FairnessPool::new(model, members, s).map_err(|e| e.to_string())
            }
        }
    } else {
        Err("group fairness disabled".to_string())
    };

    let eval = Evaluation {
        cfg,
        graph,
        model,
        ctx: ExplainContext {
            model,
            graph,
            settings: &cfg.explainers,
            trained: art.trained,
        },
        profile: profile.clone(),
        gradient,
        pool,
        provided: art.provided,
    };

    let mut skipped_nodes = BTreeMap::new();
    for &u in nodes {
        if let Err(e) = &sets[&u] {
            warn!("node {u} skipped: {e}");
            skipped_nodes.insert(u, e.clone());
        }
    }
    let rows: Vec<CellRow> = run_pool(cfg.workers, || {
        nodes
            .par_iter()
            .flat_map_iter(|&u| {
                let eval = &eval;
                let set = sets[&u].as_ref();
                cfg.methods.iter().map(move |&m| match set {
                    Ok(set) => eval.cell(m, set),
                    Err(e) => {
                        let mut row = CellRow::new(u, m.tag());
                        for name in eval.enabled_metrics() {
                            row.skipped.insert(name.to_string(), format!("perturbation set unavailable: {e}"));
                        }
                        row
                    }
                }).collect::<Vec<_>>()
            })
            .collect()
    })?;

    let metadata = RunMetadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        model_seed: cfg.model.seed,
        nodes: nodes.to_vec(),
        methods: cfg.methods.iter().map(|m| m.tag().to_string()).collect(),
        p: cfg.p,
        k: cfg.k,
        tol: cfg.tol,
        train_accuracy: accuracy(model, graph, &graph.train_nodes())?,
        test_accuracy: accuracy(model, graph, &graph.test_nodes())?,
        gamma11: profile.gamma11,
        gamma12: profile.gamma12,
        pool_size: eval.pool.as_ref().map_or(0, |p| p.len()),
        skipped_nodes,
    };
    Ok(ReliabilityReport::assemble(metadata, rows))
}
