use rand::seq::SliceRandom;

use super::{ClientUpdate, FedConfig, FedError};
use crate::data::{labeled_images, sample_pairs, ClientData, LabeledImage, Pair};
use crate::nn::{AdamConfig, AdamState, Batch, Head, Mode, ParamVector, SiameseModel};
use crate::rng::{stream, tag};
use crate::Scalar;

/// Training material of one client for one round.
enum LocalSet<T> {
    Pairs(Vec<Pair<T>>),
    Labeled(Vec<LabeledImage<T>>),
}

impl<T: Clone> LocalSet<T> {
    fn len(&self) -> usize {
        match self {
            LocalSet::Pairs(p) => p.len(),
            LocalSet::Labeled(l) => l.len(),
        }
    }

    fn select(&self, idx: &[usize]) -> LocalSet<T> {
        match self {
            LocalSet::Pairs(p) => LocalSet::Pairs(idx.iter().map(|&i| p[i].clone()).collect()),
            LocalSet::Labeled(l) => LocalSet::Labeled(idx.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    fn batch(&self) -> Batch<'_, T> {
        match self {
            LocalSet::Pairs(p) => Batch::Pairs(p),
            LocalSet::Labeled(l) => Batch::Labeled(l),
        }
    }
}

/// Trains `local_epochs` of Adam (fresh state) from `global` on the client's
/// data and reports the resulting delta.
///
/// Each round the client draws `pairs_per_impression × n_i` pairs (or uses
/// its labeled impressions with the classifier head); the last 20% of the
/// shuffled set is held in for `local_loss`.
pub fn local_train<T: Scalar>(
    model: &SiameseModel,
    global: &ParamVector<T>,
    data: ClientData<'_, T>,
    cfg: &FedConfig,
    round: usize,
    client_id: usize,
) -> Result<ClientUpdate<T>, FedError> {
    let key = [round as u64, client_id as u64];
    let mut rng = stream(cfg.seed, &[tag::LOCAL_PAIRS, key[0], key[1]]);
    let set = match model.head() {
        Head::Contrastive { .. } => {
            let count = (cfg.pairs_per_impression * data.len()).max(5);
            LocalSet::Pairs(sample_pairs(&data, count, cfg.match_fraction, &mut rng)?)
        }
        Head::Classifier { .. } => {
            let mut items = labeled_images(&data);
            if items.len() < 2 {
                return Err(crate::data::DataError::Unpairable("classifier client needs two images".into()).into());
            }
            items.shuffle(&mut rng);
            LocalSet::Labeled(items)
        }
    };
    let held = (set.len() / 5).max(1);
    let train_len = set.len() - held;
    let held_in = set.select(&(train_len..set.len()).collect::<Vec<_>>());

    let mut params = global.clone();
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train_len).collect();
    for epoch in 0..cfg.local_epochs {
        let mut shuffle = stream(cfg.seed, &[tag::LOCAL_SHUFFLE, key[0], key[1], epoch as u64]);
        order.shuffle(&mut shuffle);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = set.select(chunk);
            let mut dropout = stream(cfg.seed, &[tag::DROPOUT, key[0], key[1], epoch as u64, b as u64]);
            let (_, grad) = model.backward(&params, batch.batch(), Mode::Train(&mut dropout))?;
            adam.step(&mut params, &grad)?;
        }
    }
    let local_loss = model.loss(&params, held_in.batch(), Mode::Eval)?.as_f64();
    Ok(ClientUpdate {
        client_id,
        delta: params.sub(global)?,
        samples: data.len(),
        local_loss,
    })
}
