use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blsh::bench::{bench_grid, bench_table};
use blsh::dsp::wav::{read_wav, write_wav, write_wav_pcm16};
use blsh::dsp::{make_features, mix_at_snr, stft};
use blsh::knn::subsample_dictionary;
use blsh::metrics::score;
use blsh::store::{load_dictionary, load_model, save_dictionary, save_model};
use blsh::synth::source_pairs;
use blsh::{
    corpus_report, denoise as denoise_clip, random_projection_model, train_blsh_with, AudioClip,
    Dictionary, FeatureMatrix, FileScores, ProjectionModel, SearchMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::manifest::{self, EnhancedRecord, ManifestWriter, MixtureRecord, Record};
use crate::{BenchArgs, BuildDictArgs, DenoiseArgs, EvaluateArgs, MixArgs, SynthArgs, TrainArgs};

fn read_clip(path: &Path) -> Result<AudioClip<f64>> {
    read_wav(path).with_context(|| format!("reading {}", path.display()))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no WAV files in {}", dir.display());
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "clip".into(), |s| s.to_string_lossy().into_owned())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let speech_dir = args.out.join("speech");
    let noise_dir = args.out.join("noise");
    for d in [&speech_dir, &noise_dir] {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let range = args.first_speaker..args.first_speaker + args.speakers;
    let pairs = source_pairs(
        range,
        args.per_speaker,
        args.duration,
        args.sample_rate,
        args.seed,
    );
    for p in &pairs {
        write_wav_pcm16(speech_dir.join(format!("{}.wav", p.name)), &p.speech)?;
        write_wav_pcm16(noise_dir.join(format!("{}.wav", p.name)), &p.noise)?;
    }
    eprintln!(
        "wrote {} speech and {} noise clips to {}",
        pairs.len(),
        pairs.len(),
        args.out.display()
    );
    Ok(())
}

pub fn mix(args: &MixArgs, config: &RunConfig) -> Result<()> {
    let speech_files = wav_files(&args.speech_dir)?;
    let noise_files = wav_files(&args.noise_dir)?;
    let mut writer = ManifestWriter::create(&args.out.join("manifest.jsonl"), "mix", config)?;
    let limit = args.max_mixtures.unwrap_or(usize::MAX);
    let mut written = 0;
    let mut failed = 0;
    let pairs = speech_files
        .iter()
        .flat_map(|s| noise_files.iter().map(move |n| (s, n)))
        .take(limit);
    for (index, (speech_path, noise_path)) in pairs.enumerate() {
        let name = format!("{}__{}", stem(speech_path), stem(noise_path));
        let mut record = MixtureRecord {
            name: name.clone(),
            mixture: format!("{name}_mix.wav").into(),
            speech: format!("{name}_speech.wav").into(),
            noise: format!("{name}_noise.wav").into(),
            snr_db: config.snr_db,
            seed: config.seed,
            noise_offset: None,
            error: None,
        };
        let result = (|| -> Result<usize> {
            let speech = read_clip(speech_path)?;
            let mut noise = read_clip(noise_path)?;
            if noise.is_empty() {
                bail!("{} is empty", noise_path.display());
            }
            // the noise segment starts at a seeded offset and wraps around
            let mut rng = ChaCha8Rng::seed_from_u64(
                config.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let offset = rng.random_range(0..noise.len());
            noise.samples.rotate_left(offset);
            let m = mix_at_snr(&speech, &noise, config.snr_db)?;
            write_wav(args.out.join(&record.mixture), &m.mixture)?;
            write_wav(args.out.join(&record.speech), &m.speech)?;
            write_wav(args.out.join(&record.noise), &m.noise)?;
            Ok(offset)
        })();
        match result {
            Ok(offset) => {
                record.noise_offset = Some(offset);
                written += 1;
            }
            Err(e) => {
                eprintln!("{name}: {e:#}");
                record.error = Some(format!("{e:#}"));
                failed += 1;
            }
        }
        writer.write(&Record::Mixture(record))?;
    }
    writer.finish()?;
    eprintln!(
        "wrote {written} mixtures ({failed} failed) to {}",
        args.out.display()
    );
    if written == 0 {
        bail!("no mixture could be produced");
    }
    Ok(())
}

fn dictionary_from_manifest(path: &Path, config: &RunConfig) -> Result<Dictionary<f64>> {
    let analysis = config.analysis();
    let parts = manifest::mixtures(path)?
        .iter()
        .map(|m| {
            let mixture = read_clip(&m.mixture)?;
            let speech = read_clip(&m.speech)?;
            let noise = read_clip(&m.noise)?;
            Dictionary::from_mixture(&mixture, &speech, &noise, &analysis)
                .with_context(|| format!("mixture {}", m.name))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dictionary::concat(&parts)?)
}

pub fn build_dict(args: &BuildDictArgs, config: &RunConfig) -> Result<()> {
    let mut dict = dictionary_from_manifest(&args.manifest, config)?;
    let total = dict.len();
    if config.subsample < 1.0 {
        dict = subsample_dictionary(&dict, config.subsample, config.seed)?;
    }
    if let Some(path) = args.model.as_ref().or(config.model.as_ref()) {
        let model: ProjectionModel<f64> =
            load_model(path).with_context(|| format!("loading {}", path.display()))?;
        dict = dict.with_codes(&model)?;
    }
    if args.no_features {
        dict = dict.without_features()?;
    }
    save_dictionary(&dict, &args.out)?;
    eprintln!(
        "dictionary: {} of {total} frames, {} mask bins, codes: {}, features: {} -> {}",
        dict.len(),
        dict.n_bins(),
        dict.codes
            .as_ref()
            .map_or("none".to_string(), |c| format!("{} bits", c.cols())),
        if dict.features.is_some() { "yes" } else { "no" },
        args.out.display()
    );
    Ok(())
}

fn training_features(args: &TrainArgs, config: &RunConfig) -> Result<FeatureMatrix<f64>> {
    if let Some(path) = &args.dict {
        let dict: Dictionary<f64> =
            load_dictionary(path).with_context(|| format!("loading {}", path.display()))?;
        return dict
            .features
            .with_context(|| format!("{} stores no features to train on", path.display()));
    }
    if let Some(path) = &args.manifest {
        let analysis = config.analysis();
        let parts = manifest::mixtures(path)?
            .iter()
            .map(|m| {
                let clip = read_clip(&m.mixture)?;
                let f = make_features(
                    &stft(&clip, analysis.frame_size, analysis.hop)?,
                    analysis.kind,
                )?;
                Ok(f.select_rows(&f.nonzero_indices()))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(FeatureMatrix::concat(&parts)?);
    }
    bail!("training needs --dict or --manifest")
}

pub fn train(args: &TrainArgs, config: &RunConfig) -> Result<()> {
    let model = if args.random {
        let dim = match (&args.dict, &args.manifest) {
            (None, None) => config.analysis().feature_dim(),
            _ => training_features(args, config)?.dim(),
        };
        random_projection_model::<f64>(config.n_bits, config.feature_kind(), dim, config.seed)?
    } else {
        let features = training_features(args, config)?;
        let mut sink: Box<dyn Write> = match &args.diagnostics {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(std::io::stderr()),
        };
        writeln!(
            sink,
            "{}",
            serde_json::to_string(&Record::Header {
                command: "train".into(),
                config: serde_json::to_value(config)?,
            })?
        )?;
        let mut io_error = None;
        let outcome = train_blsh_with(&features, &config.train_config(), |d| {
            if let Err(e) = serde_json::to_writer(&mut sink, d)
                .map_err(std::io::Error::from)
                .and_then(|_| sink.write_all(b"\n"))
            {
                io_error.get_or_insert(e);
            }
        })?;
        if let Some(e) = io_error {
            return Err(e).context("writing diagnostics");
        }
        sink.flush()?;
        let worse = outcome
            .diagnostics
            .iter()
            .filter(|d| d.epsilon > 0.5)
            .count();
        if worse > 0 {
            eprintln!("warning: {worse} learners stayed above chance error after refitting");
        }
        outcome.model
    };
    save_model(&model, &args.out)?;
    eprintln!(
        "model: {} bits over {} dimensions -> {}",
        model.n_bits(),
        model.dim(),
        args.out.display()
    );
    Ok(())
}

pub fn denoise(args: &DenoiseArgs, config: &RunConfig) -> Result<()> {
    let dict_path = args
        .dict
        .as_ref()
        .or(config.dictionary.as_ref())
        .context("denoising needs a dictionary (--dict)")?;
    let mut dict: Dictionary<f64> =
        load_dictionary(dict_path).with_context(|| format!("loading {}", dict_path.display()))?;
    let model: Option<ProjectionModel<f64>> = match args.model.as_ref().or(config.model.as_ref()) {
        Some(p) => Some(load_model(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    if config.mode == SearchMode::Hamming {
        let Some(model) = &model else {
            bail!("hamming mode needs a projection model (--model), or use --mode cosine");
        };
        if dict.codes.is_none() {
            dict = dict.with_codes(model)?;
        }
    }
    if config.k > dict.len() {
        bail!(
            "K = {} exceeds the {} dictionary rows",
            config.k,
            dict.len()
        );
    }

    let mut jobs: Vec<(String, PathBuf, Option<PathBuf>, Option<PathBuf>)> = Vec::new();
    if let Some(path) = &args.manifest {
        for m in manifest::mixtures(path)? {
            jobs.push((m.name, m.mixture, Some(m.speech), Some(m.noise)));
        }
    }
    for p in &args.inputs {
        jobs.push((stem(p), p.clone(), None, None));
    }

    let analysis = config.analysis();
    let mut writer = ManifestWriter::create(&args.out.join("enhanced.jsonl"), "denoise", config)?;
    for (name, mixture, speech, noise) in jobs {
        let clip = read_clip(&mixture)?;
        let est = denoise_clip(
            &clip,
            &dict,
            model.as_ref(),
            config.k,
            config.mode,
            &analysis,
        )
        .with_context(|| format!("denoising {}", mixture.display()))?;
        let out = args.out.join(format!("{name}_enhanced.wav"));
        write_wav(&out, &est)?;
        writer.write(&Record::Enhanced(EnhancedRecord {
            name,
            enhanced: std::path::absolute(&out)?,
            mixture: std::path::absolute(&mixture)?,
            speech: speech.map(std::path::absolute).transpose()?,
            noise: noise.map(std::path::absolute).transpose()?,
        }))?;
    }
    writer.finish()?;
    eprintln!(
        "wrote enhanced files and manifest to {}",
        args.out.display()
    );
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let rows = manifest::enhanced(&args.manifest)?
        .into_iter()
        .map(|e| {
            let (Some(speech), Some(noise)) = (&e.speech, &e.noise) else {
                bail!("{}: no clean references recorded", e.name);
            };
            let est = read_clip(&e.enhanced)?;
            let speech = read_clip(speech)?;
            let noise = read_clip(noise)?;
            let scores = score(&est.samples, &speech.samples, &noise.samples)
                .with_context(|| format!("scoring {}", e.name))?;
            Ok(FileScores {
                name: e.name,
                scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = corpus_report(rows)?;
    print!("{}", report.to_table());
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let modes = args
        .modes
        .iter()
        .map(|m| m.parse::<SearchMode>())
        .collect::<blsh::Result<Vec<_>>>()?;
    let rows = bench_grid(
        &args.sizes,
        &args.bits,
        args.dim,
        &modes,
        args.queries,
        args.k,
        args.seed,
    )?;
    print!("{}", bench_table(&rows));
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&rows)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
