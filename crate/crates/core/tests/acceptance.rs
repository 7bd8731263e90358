//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Exits non-zero when a
//! criterion fails that is not listed in `EXPECTED_RED`.
//!
//! The desk-scale comparison dominates the runtime. `NLIM_BASELINE_HIDDEN`
//! overrides the width of the non-S2S_MTL kinds in it.

mod common;

use std::time::Instant;

use nlim_core::encoding::{self, Intent, Tag};
use nlim_core::evalharness::{self, CompareConfig};
use nlim_core::grammar::{self, LabeledSentence};
use nlim_core::interpreter::{self, fuzzy_match, Command, Registry, DEMO_REGISTRY};
use nlim_core::models::{self, build, forward_train, ArchKind, ArchSpec, LossWeights, Model, TrainConfig};
use nlim_core::numcore::{grad_check, GradCheckConfig, ParamStore};
use nlim_core::persistence::{decode_model, encode_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria known not to hold; see the decisions ledger.
const EXPECTED_RED: &[&str] = &["size-ratio", "desk-scale"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(name: &'static str, pass: bool, detail: impl Into<String>) -> Outcome {
    let o = Outcome { name, pass, detail: detail.into() };
    println!("{} {:<16} {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    o
}

fn demo_corpus() -> Vec<LabeledSentence> {
    let spec = grammar::load_corpus_spec(&common::data("demo.spec.json")).unwrap();
    grammar::augment(&spec, 7, 5000).unwrap()
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let data = common::toy();
    let batch = encoding::make_batch(&data, &[0, 1, 2]).unwrap();
    let mut worst = (0.0f64, ArchKind::SingleIntent);
    for kind in ArchKind::ALL {
        let arch = ArchSpec::new(kind, 8);
        let p = build(&arch, 11).unwrap();
        let loss = |q: &ParamStore| forward_train(q, &arch, &batch, LossWeights::default()).map(|(l, g)| (l.total, g));
        let r = grad_check(loss, &p, GradCheckConfig { eps: 1e-5, samples: 400, ..Default::default() }).unwrap();
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, kind);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    line(
        "gradients",
        worst.0 < 1e-4 && secs < 60.0,
        format!("max rel error {:.2e} ({}) over 5 kinds, {secs:.1}s", worst.0, worst.1),
    )
}

fn desk_scale(corpus: &[LabeledSentence]) -> (Vec<Outcome>, Option<Model>) {
    let baseline_hidden = std::env::var("NLIM_BASELINE_HIDDEN").ok().and_then(|v| v.parse().ok()).unwrap_or(models::DEFAULT_BASELINE_HIDDEN);
    let cfg = CompareConfig {
        train: TrainConfig { max_epochs: 50, seed: 7, val_fraction: 0.2, ..TrainConfig::default() },
        baseline_hidden,
        s2s_mtl_hidden: 128,
        kinds: vec![ArchKind::S2sMtl, ArchKind::MtlE2e, ArchKind::SingleIntent, ArchKind::S2sTagger],
        corpus_seed: Some(7),
    };
    let (report, trained) = evalharness::compare_architectures(corpus, &cfg, |kind, e| {
        eprintln!("  {kind} epoch {} val loss {:.4} ({:.1}s)", e.epoch, e.val_loss, e.seconds);
    })
    .unwrap();
    eprint!("{}", evalharness::render_table(&report));

    let s2s = report.result(ArchKind::S2sMtl).unwrap();
    let (ia, ta) = (s2s.metrics.intent_accuracy.unwrap(), s2s.metrics.tag_accuracy.unwrap());
    let secs = s2s.train.total_seconds();
    let d = s2s.delta.as_ref().unwrap();
    let headline = line(
        "desk-scale",
        ia >= 0.95 && ta >= 0.95 && s2s.train.epochs.len() <= 50 && secs <= 1800.0,
        format!(
            "S2S_MTL(128) intent {ia:.3} ({:+.3} vs ref), tag tf {ta:.3} ({:+.3} vs ref), {} epochs, {secs:.0}s",
            d.intent_accuracy.unwrap(),
            d.tag_accuracy.unwrap(),
            s2s.train.epochs.len()
        ),
    );
    let mut worst: Option<(f64, String)> = None;
    for r in &report.results {
        for (what, v) in [("intent", r.metrics.intent_accuracy), ("tag", r.metrics.tag_accuracy)] {
            if let Some(v) = v {
                if worst.as_ref().is_none_or(|(w, _)| v < *w) {
                    worst = Some((v, format!("{}({}) {what}", r.arch.kind, r.arch.hidden)));
                }
            }
        }
    }
    let (low, which) = worst.unwrap();
    let all = line("comparison", low >= 0.90, format!("lowest applicable accuracy {low:.3} for {which}"));
    let model = trained.into_iter().find(|m| m.arch.kind == ArchKind::S2sMtl);
    (vec![headline, all], model)
}

fn size_ratio() -> Outcome {
    let z = evalharness::size_comparison(&CompareConfig::default());
    line(
        "size-ratio",
        z.param_ratio >= 4.0,
        format!(
            "MTL_E2E(512) {} / S2S_MTL(128) {} params = {:.3} (hidden ratio {:.1}); absolute file sizes not compared",
            z.mtl_e2e_params, z.s2s_mtl_params, z.param_ratio, z.hidden_ratio
        ),
    )
}

fn extraction(model: Option<&Model>) -> Outcome {
    let Some(model) = model else {
        return line("extraction", false, "no trained S2S_MTL model");
    };
    let reg = Registry::parse(DEMO_REGISTRY).unwrap();
    let text = "buy 5 @ 295.9 tsla";
    let i = interpreter::interpret(model, &reg, text).unwrap();
    let ok = match &i.command {
        Ok(Command::Buy { quantity, price: Some(price), instrument }) => {
            i.intent == Intent::Buy && quantity.to_string() == "5" && price.to_string() == "295.9" && instrument == "TSLA"
        }
        _ => false,
    };
    let spans: Vec<String> = i.spans.iter().map(|s| format!("{}={}", s.tag, s.text)).collect();
    line("extraction", ok, format!("{text:?} -> {} [{}] {:?}", i.intent, spans.join(" "), i.command))
}

fn decode_halting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut failures = Vec::new();
    let mut halted = [0usize; 2];
    for case in 0..1000 {
        let len = rng.random_range(1..=40);
        let text: String = (0..len).map(|_| rng.random_range(32u8..127) as char).collect();
        let kind = if rng.random_bool(0.5) { ArchKind::S2sMtl } else { ArchKind::S2sTagger };
        let arch = ArchSpec::new(kind, 8);
        let mut p = build(&arch, rng.random()).unwrap();
        p.get_mut("dec.out.b").unwrap().data_mut()[Tag::End.id()] = rng.random_range(-4.0..4.0);
        match common::check_decode(&p, &arch, &text) {
            Ok(()) => halted[usize::from(models::predict(&p, &arch, &text).unwrap().tags.len() == len)] += 1,
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    line(
        "decode-halting",
        failures.is_empty(),
        format!("1000 random strings/models, {} failures; {} used the full length", failures.len(), halted[1]),
    )
}

fn additivity() -> Outcome {
    let data = common::toy();
    let batch = encoding::make_batch(&data, &[0, 1, 2]).unwrap();
    let mut worst: f64 = 0.0;
    for kind in [ArchKind::MtlE2e, ArchKind::S2sMtl] {
        let arch = ArchSpec::new(kind, 12);
        let p = build(&arch, 4).unwrap();
        let g = |wi, wt| forward_train(&p, &arch, &batch, LossWeights { intent: wi, tag: wt }).unwrap().1;
        let (both, only_i, only_t) = (g(1.0, 1.0), g(1.0, 0.0), g(0.0, 1.0));
        for name in ["enc.W", "enc.U", "enc.b"] {
            let (a, b, c) = (both.get(name).unwrap(), only_i.get(name).unwrap(), only_t.get(name).unwrap());
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(c.data()) {
                worst = worst.max((x - (y + z)).abs());
            }
        }
    }
    line("mtl-additivity", worst <= 1e-10, format!("max |g - (g_intent + g_tag)| = {worst:.2e} on the shared encoder"))
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let word = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(0..12);
        (0..n).map(|_| ['a', 'b', 'c', 'A', 'x', ' '][rng.random_range(0..6)]).collect()
    };
    let mut fuzzy_bad = 0;
    for _ in 0..1000 {
        let w = word(&mut rng);
        let cands: Vec<String> = (0..rng.random_range(1..5)).map(|_| word(&mut rng)).collect();
        let (name, d) = fuzzy_match(&w, &cands).unwrap();
        if (name.to_string(), d) != common::best_match(&w, &cands) {
            fuzzy_bad += 1;
        }
    }

    let smoke = grammar::load_corpus(&common::data("smoke.jsonl")).unwrap();
    let mut eval_bad = Vec::new();
    for kind in ArchKind::ALL {
        let arch = ArchSpec::new(kind, 10);
        let p = build(&arch, 21).unwrap();
        let m = evalharness::evaluate(&p, &arch, &smoke).unwrap();
        let (ia, il, ta, tl, fr) = common::recount(&p, &arch, &smoke);
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-9,
            (a, b) => a.is_none() && b.is_none(),
        };
        let exact = (m.intent_accuracy, m.tag_accuracy, m.free_running_tag_accuracy) == (ia, ta, fr);
        if !(exact && close(m.intent_loss, il) && close(m.tag_loss, tl)) {
            eval_bad.push(kind.name());
        }
    }

    let spec = grammar::load_corpus_spec(&common::data("demo.spec.json")).unwrap();
    let bytes = |seed| {
        let mut b = Vec::new();
        grammar::write_corpus(&mut b, &grammar::augment(&spec, seed, 5000).unwrap()).unwrap();
        b
    };
    let same = bytes(7) == bytes(7);
    line(
        "oracles",
        fuzzy_bad == 0 && eval_bad.is_empty() && same,
        format!(
            "fuzzy_match {}/1000 agree with full DP; evaluate recount mismatches {:?} on {} examples; demo corpus byte-identical: {same}",
            1000 - fuzzy_bad,
            eval_bad,
            smoke.len()
        ),
    )
}

fn persistence() -> Outcome {
    let arch = ArchSpec::new(ArchKind::S2sMtl, 16);
    let p = build(&arch, 3).unwrap();
    let bytes = encode_model(&p, &arch).unwrap();
    let (q, arch2) = decode_model(&bytes).unwrap();
    let exact = arch2 == arch
        && p.iter().zip(q.iter()).all(|((n1, a), (n2, b))| n1 == n2 && a.data().iter().zip(b.data()).all(|(x, y)| *y == (*x as f32) as f64));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut caught = 0;
    for _ in 0..100 {
        let bit = rng.random_range(0..bytes.len() * 8);
        let mut bad = bytes.clone();
        bad[bit / 8] ^= 1 << (bit % 8);
        caught += usize::from(decode_model(&bad).is_err());
    }
    line("persistence", exact && caught == 100, format!("round trip f32-exact: {exact}; single-bit corruptions caught {caught}/100"))
}

fn init_losses(corpus: &[LabeledSentence]) -> Outcome {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let (ln19, ln8) = (19f64.ln(), 8f64.ln());
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in ArchKind::ALL {
        let arch = ArchSpec::with_default_hidden(kind);
        let p = build(&arch, 7).unwrap();
        let s = models::score_indices(&p, &arch, corpus, &idx).unwrap();
        if kind.has_intent() {
            let l = s.intent_loss_sum / s.examples as f64;
            ok &= (l - ln8).abs() <= 0.5;
            parts.push(format!("{kind} intent {l:.3}"));
        }
        if kind.has_tags() {
            let l = s.tag_loss_sum / s.tag_positions as f64;
            ok &= (l - ln19).abs() <= 0.5;
            parts.push(format!("{kind} tag {l:.3}"));
        }
    }
    line("init-loss", ok, format!("ln19 {ln19:.3}, ln8 {ln8:.3}: {}", parts.join(", ")))
}

fn main() {
    let started = Instant::now();
    let corpus = demo_corpus();
    let mut results = vec![gradients(), additivity(), decode_halting(), oracles(), persistence(), init_losses(&corpus), size_ratio()];
    let (desk, model) = desk_scale(&corpus);
    results.extend(desk);
    results.push(extraction(model.as_ref()));

    let unexpected: Vec<&str> = results.iter().filter(|o| !o.pass && !EXPECTED_RED.contains(&o.name)).map(|o| o.name).collect();
    let passed = results.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass ({:.0}s)", results.len(), started.elapsed().as_secs_f64());
    for o in results.iter().filter(|o| !o.pass && EXPECTED_RED.contains(&o.name)) {
        println!("expected red: {} ({})", o.name, o.detail);
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
