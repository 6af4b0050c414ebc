use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use trajlet::baselines::{build_distance_matrix, default_waypoints, DistanceMatrixEngine, EndpointKnn, MultipointKnn};
use trajlet::encoder::{embed_trajectory, load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams};
use trajlet::error::{Error, Result};
use trajlet::eval::{
    cluster_purity, evaluate_retrieval, EmbeddingEngine, RetrievalEngine, RetrievalReport, SearchMode,
};
use trajlet::geometry::{normalize, NormalizedTrajectory};
use trajlet::retrieval::{build_bank, build_ivf, quantize_query, EmbeddingBank, IvfIndex};
use trajlet::similarity::{cosine_combined, similarity_matrix, spectral_feature, spectral_similarity};
use trajlet::sweep::{run_sweep, SweepSpec};
use trajlet::synth::{generate, DatasetSpec};
use trajlet::training::{matched_threshold, train_to_dir, MiningMode, TrainConfig, FINAL_CHECKPOINT};
use trajlet::trjfile;

use super::*;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Sim(a) => sim(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Sweep(a) => sweep(a),
        Command::Params(a) => params(a),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_normalized(path: &Path) -> Result<Vec<NormalizedTrajectory>> {
    trjfile::load(path)
        .map_err(|e| e.context(path.display().to_string()))?
        .iter()
        .map(|t| normalize(t).map_err(|e| e.context(t.id.clone())))
        .collect()
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(FINAL_CHECKPOINT)
    } else {
        p.to_path_buf()
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec: DatasetSpec = read_json(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.specs.iter_mut().for_each(|s| s.seed = seed);
    }
    let trajs = generate(&spec.specs)?;
    trjfile::save(&a.out, &trajs)?;
    println!("wrote {} trajectories to {}", trajs.len(), a.out.display());
    Ok(())
}

fn sim(a: SimArgs) -> Result<()> {
    let trajs = load_normalized(&a.input)?;
    let m = similarity_matrix(&trajs, a.metric, a.alpha).map_err(|e| match &e {
        Error::ZeroDisplacement { index } | Error::ZeroSpectrum { index } => {
            let id = trajs[*index].source_id.clone();
            e.context(id)
        }
        _ => e,
    })?;
    let mut out = String::from("id");
    for t in &trajs {
        let _ = write!(out, ",{}", t.source_id);
    }
    out.push('\n');
    for (i, t) in trajs.iter().enumerate() {
        out.push_str(&t.source_id);
        for v in m.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(&a.output, out)?;
    println!(
        "{}x{} {} matrix written to {}",
        m.size,
        m.size,
        a.metric,
        a.output.display()
    );
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ConfigFile {
    encoder: Option<EncoderConfig>,
    train: Option<TrainConfig>,
}

fn train(a: TrainArgs) -> Result<()> {
    let file: ConfigFile = match &a.config {
        Some(p) => read_json(p)?,
        None => ConfigFile::default(),
    };
    let mut enc = file.encoder.unwrap_or_default();
    let e = &a.encoder;
    enc.num_heads = e.heads.unwrap_or(enc.num_heads);
    enc.num_layers = e.layers.unwrap_or(enc.num_layers);
    enc.d_model = e.d_model.unwrap_or(enc.d_model);
    enc.d_emb = e.d_emb.unwrap_or(enc.d_emb);
    enc.max_seq_len = e.max_seq_len.unwrap_or(enc.max_seq_len);
    enc.token_layout = e.token_layout.unwrap_or(enc.token_layout);

    let mut cfg = file.train.unwrap_or_default();
    cfg.metric = a.metric.unwrap_or(cfg.metric);
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.lr_max = a.lr_max.unwrap_or(cfg.lr_max);
    cfg.margin = a.margin.unwrap_or(cfg.margin);
    cfg.sim_threshold = a.threshold.unwrap_or(cfg.sim_threshold);
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.checkpoint_every = a.checkpoint_every.unwrap_or(cfg.checkpoint_every);
    if let Some(m) = a.mining {
        cfg.mining = match m {
            MiningArg::Random => MiningMode::Random,
            MiningArg::Dynamic => MiningMode::Dynamic,
        };
    }
    if a.input_dropout.is_some() {
        cfg.input_dropout = a.input_dropout;
    }
    if a.attn_dropout.is_some() {
        cfg.attn_dropout = a.attn_dropout;
    }

    let bank = load_normalized(&a.data)?;
    if a.match_positive_rate {
        cfg.sim_threshold = matched_threshold(&bank, &cfg, cfg.metric)?;
        println!("matched {} threshold: {}", cfg.metric, cfg.sim_threshold);
    }
    let outcome = train_to_dir(&bank, &cfg, &enc, &a.out)?;
    let losses = outcome.losses();
    println!(
        "trained {} ({} params) for {} steps, {} skipped, final loss {}",
        outcome.params.config().arch_tag(),
        outcome.params.len(),
        outcome.log.len(),
        outcome.log.len() - losses.len(),
        losses.last().map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    println!("checkpoint: {}", a.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let params = load_checkpoint(checkpoint_path(&a.ckpt))?;
    let trajs = load_normalized(&a.data)?;
    let bank = build_bank(&trajs, &params)?;
    bank.save(&a.out)?;
    save_checkpoint(a.out.join(FINAL_CHECKPOINT), &params)?;
    if let Some(csv) = &a.emit_csv {
        let mut out = String::from("id,label");
        for j in 0..bank.d_emb() {
            let _ = write!(out, ",e{j}");
        }
        out.push('\n');
        for (i, t) in bank.trajectories().iter().enumerate() {
            let _ = write!(out, "{},{}", t.source_id, t.label.as_deref().unwrap_or(""));
            for v in bank.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        fs::write(csv, out)?;
    }
    println!(
        "bank of {} x {} written to {}",
        bank.len(),
        bank.d_emb(),
        a.out.display()
    );
    Ok(())
}

struct Loaded {
    bank: EmbeddingBank,
    params: EncoderParams,
    ivf: Option<(IvfIndex, usize)>,
}

fn load_search(s: &SearchArgs) -> Result<Loaded> {
    let bank = EmbeddingBank::load(&s.bank)?;
    let ckpt = s.ckpt.clone().unwrap_or_else(|| s.bank.join(FINAL_CHECKPOINT));
    let params = load_checkpoint(checkpoint_path(&ckpt))?;
    if params.config().d_emb != bank.d_emb() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint d_emb {} does not match bank d_emb {}",
            params.config().d_emb,
            bank.d_emb()
        )));
    }
    let ivf = match s.ivf {
        Some(IvfArg { nlist, nprobe }) => {
            if nprobe == 0 || nprobe > nlist {
                return Err(Error::InvalidConfig(format!(
                    "nprobe must lie in 1..={nlist}, got {nprobe}"
                )));
            }
            Some((build_ivf(&bank, nlist, s.seed)?, nprobe))
        }
        None => None,
    };
    Ok(Loaded { bank, params, ivf })
}

impl Loaded {
    fn engine(&self) -> EmbeddingEngine<'_> {
        let mode = match &self.ivf {
            Some((index, nprobe)) => SearchMode::Ivf { index, nprobe: *nprobe },
            None => SearchMode::Exact,
        };
        EmbeddingEngine::new(&self.bank, &self.params, mode)
    }
}

fn opt_cell(v: Result<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn query(a: QueryArgs) -> Result<()> {
    let loaded = load_search(&a.search)?;
    let engine = loaded.engine();
    let queries = load_normalized(&a.query)?;
    let mut csv = String::from("query_id,rank,neighbor_id,distance,cosine_sim,fft_sim\n");
    for q in &queries {
        let e = embed_trajectory(&loaded.params, q).map_err(|e| e.context(q.source_id.clone()))?;
        let result = engine.search(&quantize_query(&e.values), a.search.k);
        let fq = spectral_feature(q);
        let shown: Vec<String> = result
            .neighbors
            .iter()
            .map(|n| format!("{} ({:.4})", n.id, n.distance))
            .collect();
        println!("{}: {}", q.source_id, shown.join(", "));
        for (rank, n) in result.neighbors.iter().enumerate() {
            let t = &loaded.bank.trajectories()[n.index];
            let cos = opt_cell(cosine_combined(q, t, a.alpha));
            let fft = opt_cell(spectral_similarity(&fq, &spectral_feature(t)));
            let _ = writeln!(csv, "{},{},{},{},{cos},{fft}", q.source_id, rank + 1, n.id, n.distance);
        }
    }
    if let Some(path) = &a.emit_csv {
        fs::write(path, csv)?;
    }
    Ok(())
}

fn print_report(r: &RetrievalReport) {
    println!(
        "{} k={} queries={} minADE={:.4} minFDE={:.4} avgADE={:.4} avgFDE={:.4}",
        r.engine,
        r.k,
        r.query_count,
        r.aggregate.min_ade,
        r.aggregate.min_fde,
        r.aggregate.avg_ade,
        r.aggregate.avg_fde
    );
}

fn report_with_purity<E: RetrievalEngine>(
    engine: &E,
    queries: &[NormalizedTrajectory],
    k: usize,
    purity: bool,
) -> Result<serde_json::Value> {
    let report = evaluate_retrieval(engine, queries, k)?;
    print_report(&report);
    let mut value = serde_json::to_value(&report)?;
    if purity {
        let p = cluster_purity(engine, k, None)?;
        println!("purity@{k}={p:.4}");
        value["purity"] = p.into();
    }
    Ok(value)
}

fn eval(a: EvalArgs) -> Result<()> {
    let loaded = load_search(&a.search)?;
    let queries = load_normalized(&a.queries)?;
    let value = report_with_purity(&loaded.engine(), &queries, a.search.k, a.purity)?;
    write_json(&a.report, &value)
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let bank = load_normalized(&a.data)?;
    let queries = load_normalized(&a.queries)?;
    let labeled = bank.iter().all(|t| t.label.is_some());
    let value = match a.kind {
        BaselineKind::Matrix => {
            let store = build_distance_matrix(&bank)?;
            if let Some(p) = &a.matrix_out {
                store.save(p)?;
            }
            report_with_purity(
                &DistanceMatrixEngine {
                    store: &store,
                    bank: &bank,
                },
                &queries,
                a.k,
                labeled,
            )?
        }
        BaselineKind::Endpoint => report_with_purity(&EndpointKnn::build(&bank), &queries, a.k, labeled)?,
        BaselineKind::Multipoint => {
            let t = bank.first().map_or(2, |b| b.len());
            let engine = MultipointKnn::build(&bank, default_waypoints(t, a.waypoints))?;
            report_with_purity(&engine, &queries, a.k, labeled)?
        }
    };
    write_json(&a.report, &value)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let spec: SweepSpec = read_json(&a.spec)?;
    let bank = load_normalized(&a.data)?;
    let queries = load_normalized(&a.queries)?;
    let rows = run_sweep(&spec, &bank, &queries, &a.out)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "{} configurations, {failed} failed; {}",
        rows.len(),
        a.out.join(trajlet::sweep::SWEEP_CSV).display()
    );
    Ok(())
}

fn params(a: ParamsArgs) -> Result<()> {
    let cfg = EncoderConfig {
        d_model: a.d_model,
        d_emb: a.d_emb,
        max_seq_len: a.max_seq_len,
        token_layout: a.token_layout,
        ..EncoderConfig::default()
    }
    .with_arch(a.heads, a.layers);
    cfg.validate()?;
    println!("{}", cfg.param_count());
    Ok(())
}
