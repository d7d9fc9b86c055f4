mod common;

use std::path::{Path, PathBuf};

use molcf::pipeline::run;
use molcf::pipeline::{PipelineError, RunConfig, RunLayout};

/// The fixture renamed to the Mutagenicity TU layout.
fn data_dir(root: &Path) -> PathBuf {
    let dir = root.join("data/Mutagenicity");
    std::fs::create_dir_all(&dir).unwrap();
    for e in std::fs::read_dir(common::mutag_dir()).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().replace("MUTAG", "Mutagenicity");
        std::fs::copy(&p, dir.join(name)).unwrap();
    }
    root.join("data")
}

fn config(root: &Path, extra: &[&str]) -> RunConfig {
    let mut sets = vec![
        "dataset=Mutagenicity".to_string(),
        format!("data_dir={:?}", data_dir(root).to_string_lossy()),
        format!("output_dir={:?}", root.join("out").to_string_lossy()),
        "gtgnn.epochs=60".into(),
        "ca.epochs=6".into(),
        "ca.latent_dim=8".into(),
        "ca.hidden=[32,64]".into(),
        "data.max_graphs=6".into(),
        "encoder.dim=16".into(),
        "encoder.ffn_dim=16".into(),
        "encoder.proj_hidden=16".into(),
        "pretrain.epochs=3".into(),
        "feedback.iterations=2".into(),
    ];
    sets.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::default().with_overrides(&sets).unwrap()
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).map(|s| s.lines().count()).unwrap_or(0)
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 2);
}

#[test]
fn missing_raw_data_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default().with_overrides(&[format!("data_dir={:?}", dir.path().to_string_lossy())]).unwrap();
    let err = run::prepare_data(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Missing { .. }));
    assert!(err.to_string().contains(&dir.path().join("AIDS").display().to_string()), "{err}");
}

#[test]
fn commands_run_end_to_end_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["seeds=[0,1]"]);
    let layout = cfg.layout();

    let prep = run::prepare_data(&cfg).unwrap();
    assert!(prep.kept > 150 && prep.tps + prep.tp_failures == prep.kept, "{prep}");
    let cached = lines(&layout.default_cache());
    assert!(cached >= prep.tps);
    run::prepare_data(&cfg).unwrap();
    assert_eq!(lines(&layout.default_cache()), cached, "rerun hit the provider");

    let (_, acc) = run::train_gtgnn(&cfg).unwrap();
    assert!(acc.test_acc > 0.6, "{acc:?}");

    let first = run::train(&cfg).unwrap();
    let run_layout = RunLayout { dir: first.clone() };
    assert!(run_layout.config().exists() && run_layout.meta().exists());
    assert_eq!(RunConfig::load(&run_layout.config()).unwrap(), cfg);
    let seeds = run_layout.seeds().unwrap();
    assert_eq!(seeds.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1]);
    for (_, s) in &seeds {
        for f in ["counterfactuals.jsonl", "transcript.jsonl", "losses.jsonl", "timing.json", "report.json", "losses.svg", "ca.ckpt"] {
            assert!(s.file(f).exists(), "{f}");
        }
        assert_eq!(lines(&s.counterfactuals()), 6);
        assert!(lines(&s.transcript()) > 0);
    }
    let (reports, summary) = run::evaluate(&first).unwrap();
    assert_eq!((reports.len(), summary.runs), (2, 2));
    assert!(run::timing(std::slice::from_ref(&first)).unwrap().contains("train-ca"));

    let again = run::train(&cfg).unwrap();
    assert_ne!(again, first);
    let store = |d: &Path| std::fs::read(RunLayout { dir: d.to_path_buf() }.seed(1).counterfactuals()).unwrap();
    assert_eq!(store(&first), store(&again));

    let nf = run::train(&cfg.with_overrides(&["feedback.ablation=nf", "seeds=[0]"]).unwrap()).unwrap();
    assert_eq!(lines(&RunLayout { dir: nf.clone() }.seed(0).transcript()), 0);
    let table = run::report(&[first, nf]).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains(" nf "));

    std::fs::remove_file(RunLayout { dir: again.clone() }.seed(0).counterfactuals()).unwrap();
    assert!(matches!(run::evaluate(&again), Err(PipelineError::Missing { .. })));
}
