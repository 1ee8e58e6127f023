use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use unitlab::abx::{self, AbxConfig};
use unitlab::corpus::{self, Level, UnitSequence};
use unitlab::gen::{self, OraclePoint, SampleSource, SweepCurve, SweepParams};
use unitlab::lm::{self, NGramConfig, NGramModel, PairNormalization, Smoothing};
use unitlab::quantizer::{self, KMeansParams};
use unitlab::rng;
use unitlab::synth::{self, LexiconConfig, SynthConfig};
use unitlab::transcript;

use crate::args::*;
use crate::output::{self, Log};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let log = Log { quiet: cli.quiet };
    let name = cli.command.name();
    match &cli.command {
        Command::QuantizeTrain(a) => quantize_train(a, &output::record(name, a), &log),
        Command::QuantizeEncode(a) => quantize_encode(a, &output::record(name, a), &log),
        Command::Dedup(a) => dedup(a, &output::record(name, a), &log),
        Command::Bitrate(a) => bitrate(a, &output::record(name, a)),
        Command::Abx(a) => abx_cmd(a, &output::record(name, a)),
        Command::LmTrain(a) => lm_train(a, &output::record(name, a), &log),
        Command::LmScore(a) => lm_score(a, &output::record(name, a)),
        Command::LmSample(a) => lm_sample(a, &output::record(name, a), &log),
        Command::LmPairs(a) => lm_pairs(a, &output::record(name, a)),
        Command::GenSweep(a) => gen_sweep(a, &output::record(name, a)),
        Command::GenAuc(a) => gen_auc(a, &output::record(name, a)),
        Command::GenPickTemp(a) => gen_pick_temp(a, &output::record(name, a)),
        Command::Er(a) => er(a, &output::record(name, a)),
        Command::SynthMake(a) => synth_make(a, &log),
    }
}

fn quantize_train(a: &QuantizeTrainArgs, config: &str, log: &Log) -> Result<()> {
    let frames = corpus::load_manifest_frames(&corpus::read_manifest(&a.manifest)?)?;
    let params = KMeansParams {
        k: a.k,
        seed: a.seed,
        max_iter: a.max_iter,
        rel_tol: a.rel_tol,
    };
    let cb = quantizer::train_codebook(&frames, &params)?;
    quantizer::write_codebook(&a.out, &cb)?;
    output::sidecar(&a.out, config)?;
    if let Some(stats) = &cb.training {
        log.info(format!(
            "k={} dim={} inertia={} iterations={}",
            cb.k(),
            cb.dim(),
            stats.inertia,
            stats.iterations_run
        ));
    }
    Ok(())
}

fn quantize_encode(a: &QuantizeEncodeArgs, config: &str, log: &Log) -> Result<()> {
    let cb = quantizer::read_codebook(&a.codebook)?;
    let frames = corpus::load_manifest_frames(&corpus::read_manifest(&a.manifest)?)?;
    let seqs = frames
        .iter()
        .map(|fm| quantizer::encode(fm, &cb))
        .collect::<unitlab::Result<Vec<_>>>()?;
    corpus::write_unit_file(&a.out, &seqs)?;
    output::sidecar(&a.out, config)?;
    log.info(format!("encoded {} utterances", seqs.len()));
    Ok(())
}

fn dedup(a: &DedupArgs, config: &str, log: &Log) -> Result<()> {
    let seqs = corpus::read_unit_file(&a.input)?;
    let out: Vec<UnitSequence> = seqs.iter().map(quantizer::dedup).collect();
    corpus::write_unit_file(&a.out, &out)?;
    output::sidecar(&a.out, config)?;
    let before: usize = seqs.iter().map(UnitSequence::len).sum();
    let after: usize = out.iter().map(UnitSequence::len).sum();
    log.info(format!("{before} -> {after} units"));
    Ok(())
}

fn bitrate(a: &BitrateArgs, config: &str) -> Result<()> {
    let mut seqs = corpus::read_unit_file(&a.units)?;
    match (&a.manifest, a.frame_period_ms) {
        (Some(m), _) => corpus::attach_durations(&mut seqs, &corpus::read_manifest(m)?)?,
        (None, Some(p)) => {
            if !(p > 0.0 && p.is_finite()) {
                return Err(CliError::Usage("--frame-period-ms must be positive".into()));
            }
            for s in &mut seqs {
                s.duration_s = Some(s.len() as f64 * p / 1000.0);
            }
        }
        (None, None) => unreachable!("clap requires one duration source"),
    }
    let post_dedup = !a.no_dedup;
    let bps = quantizer::bitrate(&seqs, post_dedup)?;
    let body = format!("bitrate_bps\tpost_dedup\n{bps}\t{post_dedup}\n");
    output::report(a.out.as_deref(), &body, config)
}

fn abx_cmd(a: &AbxArgs, config: &str) -> Result<()> {
    let items = corpus::read_abx_items(&a.items)?;
    let frames = corpus::load_manifest_frames(&corpus::read_manifest(&a.manifest)?)?;
    let cfg = AbxConfig {
        mode: a.mode.parse()?,
        metric: a.metric.parse()?,
        max_triples_per_cell: a.max_triples,
        seed: a.seed,
    };
    let r = abx::abx_score(&items, &frames, &cfg)?;
    let mut body = String::from("center_a\tcenter_b\tprev_phone\tnext_phone\tspeakers\tscore\tn_triples\n");
    for c in &r.cells {
        let _ = writeln!(
            body,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.center_a, c.center_b, c.prev_phone, c.next_phone, c.speakers, c.score, c.n_triples
        );
    }
    let _ = write!(body, "mode\terror_rate\tn_triples\n{}\t{}\t{}\n", r.mode, r.error_rate, r.n_triples);
    output::report(a.out.as_deref(), &body, config)
}

fn lm_train(a: &LmTrainArgs, config: &str, log: &Log) -> Result<()> {
    let seqs = corpus::read_unit_file(&a.units)?;
    let smoothing = match a.smoothing.as_str() {
        "add-k" => Smoothing::AddK { k: a.add_k },
        _ => Smoothing::AbsoluteDiscount { discount: a.discount },
    };
    let model = NGramModel::train(
        &seqs,
        NGramConfig {
            order: a.order,
            smoothing,
            dedup: !a.no_dedup,
        },
    )?;
    lm::write_model(&a.out, &model)?;
    output::sidecar(&a.out, config)?;
    log.info(format!(
        "order {} over {} units, {} training tokens",
        model.order(),
        model.vocab().len(),
        model.training_tokens()
    ));
    Ok(())
}

fn lm_score(a: &LmScoreArgs, config: &str) -> Result<()> {
    let model = lm::read_model(&a.model)?;
    let seqs = corpus::read_unit_file(&a.units)?;
    let mut body = String::from("utt_id\tlogprob\tn_tokens\tperplexity\n");
    for s in &seqs {
        let r = model.score_default(&s.units);
        let _ = writeln!(body, "{}\t{}\t{}\t{}", s.utt_id, r.total_logprob, r.per_token.len(), r.perplexity);
    }
    output::report(a.out.as_deref(), &body, config)
}

fn lm_sample(a: &LmSampleArgs, config: &str, log: &Log) -> Result<()> {
    let model = lm::read_model(&a.model)?;
    let prompts: Vec<(String, Option<Vec<u32>>)> = match &a.prompts {
        Some(p) => corpus::read_unit_file(p)?
            .into_iter()
            .map(|s| (s.utt_id, Some(s.units)))
            .collect(),
        None => {
            let width = a.n.to_string().len();
            (0..a.n).map(|i| (format!("sample{i:0width$}"), None)).collect()
        }
    };
    let mut out = Vec::new();
    for (i, (id, prompt)) in prompts.iter().enumerate() {
        let mut r = rng::derived(a.seed, &[i as u64]);
        let units = model.sample_with_rng(a.temperature, a.max_len, prompt.as_deref(), &mut r)?;
        if !units.is_empty() {
            out.push(UnitSequence::new(id.clone(), units));
        }
    }
    let skipped = prompts.len() - out.len();
    corpus::write_unit_file(&a.out, &out)?;
    output::sidecar(&a.out, config)?;
    log.info(format!("wrote {} samples ({skipped} empty samples skipped)", out.len()));
    Ok(())
}

fn lm_pairs(a: &LmPairsArgs, config: &str) -> Result<()> {
    let model = lm::read_model(&a.model)?;
    let pairs = corpus::read_pairs(&a.pairs)?;
    let norm: PairNormalization = a.normalize.parse()?;
    let r = lm::pair_accuracy(&model, &pairs, norm)?;
    let body = format!("accuracy\terror_rate\tn_pairs\n{}\t{}\t{}\n", r.accuracy, r.error_rate, r.n_pairs);
    output::report(a.out.as_deref(), &body, config)
}

fn grid_or_default(grid: &[f64]) -> Vec<f64> {
    if grid.is_empty() {
        gen::DEFAULT_GRID.to_vec()
    } else {
        grid.to_vec()
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn gen_sweep(a: &GenSweepArgs, config: &str) -> Result<()> {
    let reference = lm::read_model(&a.reference)?;
    let params = SweepParams {
        grid: grid_or_default(&a.grid),
        samples_per_temp: a.samples_per_temp,
        max_len: a.max_len,
        seed: a.seed,
    };
    let curve = if let Some(m) = &a.model {
        let generator = lm::read_model(m)?;
        gen::temperature_sweep(
            &SampleSource::Model(&generator),
            &reference,
            &params,
            &file_stem(m),
            &file_stem(&a.reference),
        )?
    } else {
        let mut sets = Vec::new();
        for spec in &a.samples {
            let (t, path) = spec
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--samples {spec:?}: expected TEMPERATURE=FILE")))?;
            let t: f64 = t
                .parse()
                .map_err(|_| CliError::Usage(format!("--samples {spec:?}: bad temperature")))?;
            sets.push((t, corpus::read_unit_file(path)?));
        }
        gen::temperature_sweep(&SampleSource::External(&sets), &reference, &params, "external", &file_stem(&a.reference))?
    };
    output::report(a.out.as_deref(), &curve.to_tsv(), config)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NOT-COMPUTABLE".to_string(), |x| x.to_string())
}

fn gen_auc(a: &GenAucArgs, config: &str) -> Result<()> {
    let text = std::fs::read_to_string(&a.curve).map_err(|e| CliError::Data(format!("{}: {e}", a.curve.display())))?;
    let curve = SweepCurve::from_tsv(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.curve.display())))?;
    let oracle = match (a.oracle_ppx, a.oracle_vert, &a.oracle_units, &a.reference) {
        (Some(p), Some(v), _, _) => OraclePoint::new(p, v)?,
        (_, _, Some(units), Some(reference)) => {
            let model = lm::read_model(reference)?;
            let seqs: Vec<Vec<u32>> = corpus::read_unit_file(units)?.into_iter().map(|s| s.units).collect();
            OraclePoint::new(gen::corpus_perplexity(&model, &seqs)?, gen::vert(&seqs, 2)?.vert)?
        }
        _ => return Err(CliError::Usage("need --oracle-ppx and --oracle-vert, or --oracle-units with --reference".into())),
    };
    let anchors = gen::find_anchors(&curve, &oracle)?;
    let auc = match gen::auc_between_anchors(&curve, &oracle) {
        Ok(v) => Some(v),
        Err(unitlab::Error::NotComputable(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let body = format!(
        "oracle_ppx\toracle_vert\tt_at_oracle_ppx\tt_at_oracle_vert\tppx_at_oracle_vert\tvert_at_oracle_ppx\tauc\n{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        oracle.ppx,
        oracle.vert,
        opt(anchors.t_at_oracle_ppx),
        opt(anchors.t_at_oracle_vert),
        opt(anchors.ppx_at_oracle_vert),
        opt(anchors.vert_at_oracle_ppx),
        opt(auc),
    );
    output::report(a.out.as_deref(), &body, config)
}

fn gen_pick_temp(a: &GenPickTempArgs, config: &str) -> Result<()> {
    let model = lm::read_model(&a.model)?;
    let prompts = corpus::read_unit_file(&a.prompts)?;
    let refs: HashMap<String, Vec<u32>> = corpus::read_unit_file(&a.references)?
        .into_iter()
        .map(|s| (s.utt_id, s.units))
        .collect();
    if refs.len() != prompts.len() {
        return Err(CliError::Data(format!(
            "{} prompts but {} references",
            prompts.len(),
            refs.len()
        )));
    }
    let mut references = Vec::with_capacity(prompts.len());
    for p in &prompts {
        let r = refs
            .get(&p.utt_id)
            .ok_or_else(|| CliError::Data(format!("no reference for prompt {:?}", p.utt_id)))?;
        references.push(r.clone());
    }
    let prompt_units: Vec<Vec<u32>> = prompts.into_iter().map(|p| p.units).collect();
    let r = gen::select_continuation_temperature(
        &model,
        &prompt_units,
        &references,
        &grid_or_default(&a.grid),
        a.n_continuations,
        a.seed,
    )?;
    let mut body = String::from("temperature\tmean_bleu2\n");
    for (t, b) in &r.mean_bleu {
        let _ = writeln!(body, "{t}\t{b}");
    }
    let _ = writeln!(body, "selected\t{}", r.selected);
    output::report(a.out.as_deref(), &body, config)
}

fn er(a: &ErArgs, config: &str) -> Result<()> {
    let level: Level = a.level.parse()?;
    let refs = corpus::read_transcripts(&a.reference, level)?;
    let hyps = corpus::read_transcripts(&a.hyp, level)?;
    let r = transcript::error_rate(&refs, &hyps, level, a.normalize)?;
    let body = format!(
        "rate\tS\tI\tD\tN\n{}\t{}\t{}\t{}\t{}\n",
        r.rate, r.substitutions, r.insertions, r.deletions, r.ref_tokens
    );
    output::report(a.out.as_deref(), &body, config)
}

#[derive(Debug, Default, Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
struct SynthSpec {
    corpus: SynthConfig,
    lexicon: Option<LexiconConfig>,
}

fn synth_make(a: &SynthMakeArgs, log: &Log) -> Result<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.corpus.seed = seed;
        if let Some(l) = &mut spec.lexicon {
            l.seed = seed;
        }
    }
    let corpus = synth::make_synthetic_corpus(&spec.corpus)?;
    let mut written = corpus.write(&a.out)?;
    if let Some(l) = &spec.lexicon {
        written.extend(synth::make_lexicon(l)?.write(&a.out.join("lexicon"))?);
    }
    let record = output::record("synth-make", &spec);
    let path = a.out.join("synth.config.json");
    std::fs::write(&path, format!("{record}\n")).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    log.info(format!("wrote {} files under {}", written.len() + 1, a.out.display()));
    Ok(())
}
