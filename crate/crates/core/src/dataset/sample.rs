use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DatasetConfig;
use crate::waveform::codes::BARKER_LENGTHS;
use crate::waveform::{apply_awgn, synthesize_frame, IqFrame, SignalClass, SignalParams};
use crate::error::Result;

/// Frank orders actually drawn. Order 1 is a single zero-phase chip, which is
/// an unmodulated pulse under another name.
const SAMPLED_FRANK_ORDERS: std::ops::RangeInclusive<u32> = 2..=4;

/// The generator for record `index`: one ChaCha stream per index.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw in `[lo, hi]` stored at f32 precision, kept inside the range.
fn draw_time<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let x = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let mut q = x as f32;
    if (q as f64) > hi {
        q = q.next_down();
    }
    if (q as f64) < lo {
        q = q.next_up();
    }
    q as f64
}

fn draw_code_length<R: Rng>(rng: &mut R, class: SignalClass) -> u32 {
    match class {
        SignalClass::Barker => *BARKER_LENGTHS.choose(rng).expect("non-empty") as u32,
        SignalClass::PolyphaseBarker => rng.gen_range(2..=13),
        SignalClass::Frank => {
            let m = rng.gen_range(SAMPLED_FRANK_ORDERS);
            m * m
        }
        SignalClass::Lfm | SignalClass::Unmodulated => 1,
    }
}

fn draw_params<R: Rng>(rng: &mut R, config: &DatasetConfig) -> SignalParams {
    let class = SignalClass::ALL[rng.gen_range(0..SignalClass::ALL.len())];
    let t_pw = draw_time(rng, config.t_pw_s);
    let t_pri = draw_time(rng, config.t_pri_s);
    let t_d = draw_time(rng, config.t_d_s);
    let n_p = rng.gen_range(config.n_p.0..=config.n_p.1);
    let l_c = draw_code_length(rng, class);
    let snr_db = rng.gen_range(config.snr_min..=config.snr_max) as f64;
    SignalParams {
        class,
        t_pw,
        t_pri,
        n_p,
        t_d,
        l_c,
        snr_db,
    }
}

/// Ground truth of record `index`, a pure function of `(config, index)`.
pub fn sample_params(config: &DatasetConfig, index: u64) -> SignalParams {
    draw_params(&mut record_rng(config.seed, index), config)
}

/// One generated record: labels and the noisy frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub index: u64,
    pub params: SignalParams,
    pub frame: IqFrame,
}

/// Regenerates record `index` from the config alone.
pub fn generate_record(config: &DatasetConfig, index: u64) -> Result<DatasetRecord> {
    let mut rng = record_rng(config.seed, index);
    let params = draw_params(&mut rng, config);
    let mut frame = synthesize_frame(&params)?;
    apply_awgn(&mut frame, params.snr_db, &mut rng);
    Ok(DatasetRecord {
        index,
        params,
        frame,
    })
}
