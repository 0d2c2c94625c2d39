//! Glue between datasets and models: the split every stage agrees on,
//! feature preparation and checkpoint assembly.

use crate::dataset::{featurize, fit_norm, split, Dataset, DatasetError, NormStats, Split};
use crate::neural::{
    grid_search, train, Architecture, BiLstmNet, Checkpoint, CheckpointHeader, GridPoint, GridRow,
    MlpDims, MlpNet, ModelDims, NeuralError, Sample, TrainConfig, TrainOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Seed of the train/val/test partition: the dataset's own seed, so every
/// model trained on a dataset sees the same split.
pub fn split_seed(ds: &Dataset) -> u64 {
    ds.meta.seed
}

pub fn dataset_split(ds: &Dataset) -> Result<Split, DatasetError> {
    split(ds.records.len(), split_seed(ds))
}

pub fn train_norm(ds: &Dataset, sp: &Split) -> Result<NormStats, DatasetError> {
    fit_norm(sp.train.iter().map(|&i| &ds.records[i]))
}

/// Standardized samples; `flatten` turns each sequence into one row.
pub fn samples(
    ds: &Dataset,
    idx: &[usize],
    norm: &NormStats,
    flatten: bool,
) -> Result<Vec<Sample>, DatasetError> {
    idx.iter()
        .map(|&i| {
            let r = &ds.records[i];
            let mut x = featurize(r, norm)?;
            if flatten {
                x.width *= x.steps;
                x.steps = 1;
            }
            Ok(Sample {
                x,
                k: r.k_index,
                u: [r.u.x, r.u.y],
            })
        })
        .collect()
}

fn run<N: crate::neural::Network>(
    net: &N,
    ds: &Dataset,
    cfg: &TrainConfig,
    flatten: bool,
) -> Result<(TrainOutcome, NormStats, usize), PipelineError> {
    let sp = dataset_split(ds)?;
    let norm = train_norm(ds, &sp)?;
    let tr = samples(ds, &sp.train, &norm, flatten)?;
    let va = samples(ds, &sp.val, &norm, flatten)?;
    let steps = ds.meta.f;
    let tr_ref: Vec<&Sample> = tr.iter().collect();
    let va_ref: Vec<&Sample> = va.iter().collect();
    Ok((train(net, &tr_ref, &va_ref, cfg)?, norm, steps))
}

fn checkpoint(
    architecture: Architecture,
    ds: &Dataset,
    dataset_hash: &str,
    cfg: &TrainConfig,
    out: &TrainOutcome,
    norm: NormStats,
    steps: usize,
) -> Checkpoint {
    let n_params = architecture.n_params();
    Checkpoint {
        header: CheckpointHeader {
            architecture,
            // Parallelism never changes results and is not persisted.
            hyper: TrainConfig {
                parallel: false,
                ..*cfg
            },
            split_seed: split_seed(ds),
            dataset_hash: dataset_hash.into(),
            val_loss: out.best_val,
            best_epoch: out.best_epoch,
            norm,
            steps,
            n_params,
            producer: None,
        },
        theta: out.theta.clone(),
    }
}

/// Trains the recurrent localizer on the dataset's training split.
pub fn train_localizer(
    ds: &Dataset,
    dataset_hash: &str,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainOutcome), PipelineError> {
    let dims = ModelDims::standard(ds.feature_width(), ds.meta.k);
    let (out, norm, steps) = run(&BiLstmNet::new(dims), ds, cfg, false)?;
    Ok((
        checkpoint(
            Architecture::Bilstm { dims },
            ds,
            dataset_hash,
            cfg,
            &out,
            norm,
            steps,
        ),
        out,
    ))
}

/// Trains the feed-forward reference on the same split.
pub fn train_baseline(
    ds: &Dataset,
    dataset_hash: &str,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainOutcome), PipelineError> {
    let dims = MlpDims::standard(ds.feature_width() * ds.meta.f);
    let (out, norm, steps) = run(&MlpNet::new(dims), ds, cfg, true)?;
    Ok((
        checkpoint(
            Architecture::Mlp { dims },
            ds,
            dataset_hash,
            cfg,
            &out,
            norm,
            steps,
        ),
        out,
    ))
}

/// Fraction of `idx` whose most probable class is the generating
/// configuration, under a recurrent-model checkpoint.
pub fn class_accuracy(ds: &Dataset, ck: &Checkpoint, idx: &[usize]) -> Result<f64, PipelineError> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let net = BiLstmNet::new(ck.model_dims()?);
    let set = samples(ds, idx, &ck.header.norm, false)?;
    let mut hits = 0;
    for chunk in set.chunks(128) {
        let seqs: Vec<_> = chunk.iter().map(|s| &s.x).collect();
        let ks: Vec<usize> = chunk.iter().map(|s| s.k).collect();
        for ((_, p), &k) in net.predict(&ck.theta, &seqs, &ks)?.iter().zip(&ks) {
            let best = (0..p.len()).fold(0, |b, m| if p[m] > p[b] { m } else { b });
            hits += usize::from(best == k);
        }
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// Loss-history CSV: `epoch,train_loss,val_loss,val_coord,val_class,improved`.
pub fn history_csv(out: &TrainOutcome) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_coord,val_class,improved\n");
    for h in &out.history {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.epoch, h.train_loss, h.val_loss, h.val_coord, h.val_class, h.improved as u8
        ));
    }
    s
}

/// Hyperparameter search for either architecture on the dataset's split;
/// returns the best grid index and one row per point.
pub fn grid_search_on(
    ds: &Dataset,
    baseline: bool,
    grid: &[GridPoint],
    cfg: &TrainConfig,
) -> Result<(usize, Vec<GridRow>), PipelineError> {
    let sp = dataset_split(ds)?;
    let norm = train_norm(ds, &sp)?;
    let tr = samples(ds, &sp.train, &norm, baseline)?;
    let va = samples(ds, &sp.val, &norm, baseline)?;
    let tr_ref: Vec<&Sample> = tr.iter().collect();
    let va_ref: Vec<&Sample> = va.iter().collect();
    let out = if baseline {
        grid_search(
            &MlpNet::new(MlpDims::standard(ds.feature_width() * ds.meta.f)),
            grid,
            &tr_ref,
            &va_ref,
            cfg,
        )?
    } else {
        grid_search(
            &BiLstmNet::new(ModelDims::standard(ds.feature_width(), ds.meta.k)),
            grid,
            &tr_ref,
            &va_ref,
            cfg,
        )?
    };
    Ok(out)
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("lr,alpha,best_val,best_epoch,final_train_loss\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.point.lr, r.point.alpha, r.best_val, r.best_epoch, r.final_train_loss
        ));
    }
    s
}
