//! Closed-form trainable-parameter counts from the architecture tables.
//!
//! Each block record is `(spatial in, spatial out, temporal out, kernel,
//! stride)`; the temporal conv reads the spatial output. Terms beyond the
//! listed weights: one `M×M` (or `M_p×M_p`) edge mask per graph, batch-norm
//! scale and shift, and a biased 1×1 projection on residuals whose width or
//! stride changes.

pub type Record = (usize, usize, usize, usize, usize);

pub const LIGHT4_JOINT: [Record; 4] = [
    (3, 32, 32, 9, 1),
    (32, 32, 64, 9, 2),
    (128, 128, 128, 9, 2),
    (256, 256, 256, 7, 2),
];

pub const FULL9_JOINT: [Record; 9] = [
    (3, 64, 64, 9, 1),
    (64, 64, 64, 9, 1),
    (64, 64, 128, 9, 2),
    (256, 128, 128, 9, 1),
    (128, 128, 128, 9, 1),
    (128, 128, 256, 9, 2),
    (512, 256, 256, 9, 1),
    (256, 256, 256, 9, 1),
    (256, 256, 256, 9, 1),
];

fn temporal(r: Record) -> usize {
    let (ci, cs, co, k, s) = r;
    let res = if ci != co || s != 1 { co * ci + co } else { 0 };
    2 * cs + co * k * cs + 2 * co + res
}

/// `W_act` plus `Γ` structural weights and masks.
pub fn joint_block(r: Record, m: usize, gamma: usize) -> usize {
    (1 + gamma) * r.1 * r.0 + gamma * m * m + temporal(r)
}

pub fn part_block(r: Record, parts: usize) -> usize {
    r.1 * r.0 + parts * parts + temporal(r)
}

/// One branch: every joint block, and a part block for each block after
/// the first.
pub fn branch(records: &[Record], m: usize, parts: usize, gamma: usize) -> usize {
    records.iter().map(|&r| joint_block(r, m, gamma)).sum::<usize>()
        + records[1..].iter().map(|&r| part_block(r, parts)).sum::<usize>()
}

/// `in-hidden-out` with biases and a batch-norm on the output.
fn mlp(i: usize, h: usize, o: usize) -> usize {
    i * h + h + h * o + o + 2 * o
}

/// Joint-feature, `K` edge/joint rounds and two projected embeddings, all
/// 128 wide; the input is `D·T_agim` flattened.
pub fn agim(coords: usize, t_agim: usize, k: usize) -> usize {
    mlp(coords * t_agim, 128, 128) + k * (mlp(256, 128, 128) + mlp(128, 128, 128)) + 2 * (mlp(128, 128, 128) + 128 * 128 + 128)
}

pub fn recognition(branches: usize, classes: usize) -> usize {
    let f = 256 * branches;
    f * 256 + 256 + 256 * 256 + 256 + 256 * classes + classes
}

pub fn prediction(branches: usize, classes: usize, coords: usize, m: usize, gamma: usize) -> usize {
    let f = 256 * branches;
    let fuse = f * 256 + 256 + 256 * 256 + 256;
    let jgc = (1 + gamma) * 256 * 256 + gamma * m * m;
    let gru = 3 * 256 * (3 * coords + classes) + 3 * 256 * 256 + 2 * 3 * 256;
    let out = 256 * 256 + 256 + 256 * coords + coords;
    fuse + jgc + gru + out
}

#[allow(clippy::too_many_arguments)]
pub fn model(records: &[Record], m: usize, parts: usize, classes: usize, coords: usize, branches: usize, gamma: usize) -> usize {
    agim(coords, 49, 3)
        + branches * branch(records, m, parts, gamma)
        + recognition(branches, classes)
        + prediction(branches, classes, coords, m, gamma)
}
