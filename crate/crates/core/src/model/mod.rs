//! Multi-task prediction network: context construction, forward and backward
//! passes, losses, training, fine-tuning, checkpoints and the table threshold.

mod checkpoint;
mod context;
mod loss;
mod network;
mod threshold;
mod train;

pub use checkpoint::{checkpoint_bytes, checkpoint_crc, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use context::{
    bucket_bounds, bucket_midpoint, build_dataset, count_bucket, one_hot, ContextBuilder, Dataset, Extras, Observation,
    QueryContext, Sample, Targets, DEFAULT_COUNT_BUCKETS,
};
pub use loss::{bce, cross_entropy, cross_entropy_grad, focal_grad, focal_loss, PROB_CLIP};
pub use network::{Dense, FocalParams, Head, Layout, LossParts, ModelConfig, ModelShape, Network, Prediction};
pub use threshold::{adapt_threshold, ThresholdState, ThresholdVariant, TAU_MAX, TAU_MIN};
pub use train::{
    batch_gradient, evaluate, fine_tune, gradient_check, split_indices, train, EpochStats, FineTuneConfig,
    FineTuneReport, TrainConfig, TrainReport,
};

/// Inference on the window ending at the last context of `window`.
pub fn predict(net: &Network, window: &[Option<&QueryContext>]) -> crate::Result<Prediction> {
    let zeros = (vec![0.0; net.cfg.count_buckets], vec![0.0; net.shape.tables], vec![0.0; net.shape.classes]);
    let extras = match window.last().copied().flatten() {
        Some(c) => Extras { count_onehot: &c.count_onehot, tables: &c.tables, bi_delta: &c.bi_delta },
        None => Extras { count_onehot: &zeros.0, tables: &zeros.1, bi_delta: &zeros.2 },
    };
    net.forward(window, &extras)
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    fn focal() -> FocalParams {
        FocalParams { alpha: 0.75, gamma: 3.0 }
    }

    #[test]
    fn gradient_check_passes_on_toy_net() {
        let net = tiny_net(1);
        assert!(net.param_count() <= 500, "{}", net.param_count());
        let data = cyclic_dataset(&net, 3, 6);
        let all: Vec<usize> = (0..data.samples.len()).collect();
        let (_, grad) = batch_gradient(&net, &data, &all, focal()).unwrap();
        let err = gradient_check(&net, &data, focal(), &grad).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_two_layers() {
        let mut net = tiny_net(2);
        net = Network::new(ModelConfig { layers: 2, ..net.cfg.clone() }, net.shape);
        let data = cyclic_dataset(&net, 3, 5);
        let all: Vec<usize> = (0..data.samples.len()).collect();
        let (_, grad) = batch_gradient(&net, &data, &all, FocalParams { alpha: 1.0, gamma: 0.0 }).unwrap();
        assert!(gradient_check(&net, &data, FocalParams { alpha: 1.0, gamma: 0.0 }, &grad).unwrap() < 1e-4);
    }

    #[test]
    fn sign_flip_mutant_fails_check() {
        let net = tiny_net(1);
        let data = cyclic_dataset(&net, 3, 6);
        let all: Vec<usize> = (0..data.samples.len()).collect();
        let (_, mut grad) = batch_gradient(&net, &data, &all, focal()).unwrap();
        let merge = net.layout().merge.w;
        grad[merge].iter_mut().for_each(|g| *g = -*g);
        assert!(gradient_check(&net, &data, focal(), &grad).unwrap() > 1e-2);
    }

    #[test]
    fn first_epoch_lowers_loss() {
        let mut net = Network::new(
            ModelConfig {
                hidden: 16,
                merge: 16,
                emb_result: 8,
                emb_stmt: 8,
                emb_delta: 8,
                seed: 3,
                ..Default::default()
            },
            ModelShape { tables: 2, enc_dim: 4, classes: 9 },
        );
        let data = cyclic_dataset(&net, 4, 200);
        let cfg = TrainConfig { lr: 3e-3, batch_size: 16, max_epochs: 1, ..Default::default() };
        let report = train(&mut net, &data, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert!(report.epochs[0].train.total() < report.initial.total());
    }

    #[test]
    fn epochs_capped_and_early_stop_triggers() {
        let mut net = tiny_net(4);
        let mut data = cyclic_dataset(&net, 3, 60);
        let cfg = TrainConfig {
            lr: 1e-2,
            batch_size: 8,
            max_epochs: 25,
            patience: 2,
            val_fraction: 0.2,
            ..Default::default()
        };
        // rig validation targets to contradict the training signal
        let n = data.samples.len();
        for s in &mut data.samples[n - 12..] {
            s.targets.deltas.iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        let report = train(&mut net, &data, &cfg).unwrap();
        assert!(report.epochs.len() <= 25);
        assert!(report.stopped_early, "{} epochs", report.epochs.len());
        assert!(report.epochs.len() < 25);
    }

    #[test]
    fn fine_tune_freezes_body() {
        let mut net = tiny_net(6);
        let data = cyclic_dataset(&net, 3, 30);
        let before = net.params.clone();
        let cfg = FineTuneConfig { epochs: 3, lr: 1e-2, batch_size: 4, ..Default::default() };
        let report = fine_tune(&mut net, &data, &[1], &cfg).unwrap();
        let head = net.layout().head_range();
        assert_eq!(before[..head.start], net.params[..head.start]);
        assert_ne!(before[head.clone()], net.params[head]);
        assert_eq!(report.delta_loss.len(), 4);
    }

    #[test]
    fn fine_tune_identity() {
        let mut net = tiny_net(6);
        let data = cyclic_dataset(&net, 3, 10);
        let before = net.params.clone();
        fine_tune(&mut net, &data, &[], &FineTuneConfig { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(before, net.params);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = tiny_net(1);
        assert!(matches!(
            train(&mut net, &Dataset::default(), &TrainConfig::default()),
            Err(crate::Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn overfits_small_pattern_set() {
        let mut net = Network::new(
            ModelConfig {
                hidden: 32,
                merge: 32,
                emb_result: 16,
                emb_stmt: 8,
                emb_delta: 16,
                dropout: 0.0,
                seed: 7,
                ..Default::default()
            },
            ModelShape { tables: 2, enc_dim: 4, classes: 33 },
        );
        let data = cyclic_dataset(&net, 12, 520);
        let cfg = TrainConfig { lr: 3e-3, batch_size: 16, max_epochs: 25, patience: 25, ..Default::default() };
        train(&mut net, &data, &cfg).unwrap();
        let mut exact = 0;
        for s in &data.samples {
            let p = predict(&net, &data.window(s)).unwrap();
            let want: Vec<usize> = (0..33).filter(|i| s.targets.deltas[*i] == 1.0).collect();
            let mut order: Vec<usize> = (0..33).collect();
            order.sort_by(|a, b| p.deltas[*b].total_cmp(&p.deltas[*a]));
            let mut got = order[..want.len()].to_vec();
            got.sort();
            if got == want {
                exact += 1;
            }
        }
        let recall = exact as f64 / data.samples.len() as f64;
        assert!(recall >= 0.95, "exact-set recall {recall}");
    }
}
