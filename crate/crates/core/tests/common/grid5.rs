//! A 5x5 open gridworld with an exhaustive dataset and an exact
//! finite-horizon value-iteration oracle.

use std::collections::HashMap;

use higoc_core::dataset::{Dataset, DatasetMeta, Tier, Transition};
use higoc_core::gcrl::{her_relabel, segment_backup, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SIDE: i64 = 5;
pub const N: usize = 5;
pub const BETA: f64 = 10.0;
pub const ACTIONS: [[i64; 2]; 5] = [[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]];

fn step(cell: (i64, i64), a: usize) -> ((i64, i64), f64) {
    let [dx, dy] = ACTIONS[a];
    if dx == 0 && dy == 0 {
        return (cell, -0.01);
    }
    let next = (cell.0 + dx, cell.1 + dy);
    if next.0 < 0 || next.1 < 0 || next.0 >= SIDE || next.1 >= SIDE {
        (cell, -0.1)
    } else {
        (next, -0.02)
    }
}

fn vec_of(c: (i64, i64)) -> [f64; 4] {
    [c.0 as f64 + 0.5, c.1 as f64 + 0.5, 0.0, 0.0]
}

fn cell_of(s: &[f64; 4]) -> (i64, i64) {
    (s[0].floor() as i64, s[1].floor() as i64)
}

fn action_of(a: &[f64; 2]) -> usize {
    ACTIONS
        .iter()
        .position(|v| v[0] as f64 == a[0] && v[1] as f64 == a[1])
        .unwrap()
}

/// Every start cell followed by every action sequence of length N.
pub fn exhaustive_dataset() -> Dataset {
    let mut transitions = Vec::new();
    let mut k = 0;
    for x in 0..SIDE {
        for y in 0..SIDE {
            for code in 0..ACTIONS.len().pow(N as u32) {
                let mut c = (x, y);
                let mut rest = code;
                for j in 0..N {
                    let a = rest % ACTIONS.len();
                    rest /= ACTIONS.len();
                    let (next, r) = step(c, a);
                    transitions.push(Transition {
                        k,
                        j,
                        s: vec_of(c),
                        a: [ACTIONS[a][0] as f64, ACTIONS[a][1] as f64],
                        sp: vec_of(next),
                        r,
                        done: j + 1 == N,
                    });
                    c = next;
                }
                k += 1;
            }
        }
    }
    let meta = DatasetMeta {
        tier: Tier::Expert,
        k,
        maze: "grid5".into(),
        seed: 0,
        mean_return: 0.0,
        random_mean_return: -1.0,
        expert_mean_return: 0.0,
    };
    Dataset::new(meta, transitions).unwrap()
}

fn dist(a: (i64, i64), b: (i64, i64)) -> f64 {
    (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt()
}

/// `V_h(s, g) = max_a r(s, a) + (h == 0 ? −β d(s', g) : V_{h−1}(s', g))`.
pub fn value_iteration() -> HashMap<((i64, i64), (i64, i64), usize), f64> {
    let cells: Vec<(i64, i64)> = (0..SIDE).flat_map(|x| (0..SIDE).map(move |y| (x, y))).collect();
    let mut v = HashMap::new();
    for h in 0..N {
        for &s in &cells {
            for &g in &cells {
                let best = (0..ACTIONS.len())
                    .map(|a| {
                        let (sp, r) = step(s, a);
                        if h == 0 {
                            r - BETA * dist(sp, g)
                        } else {
                            r + v[&(sp, g, h - 1)]
                        }
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                v.insert((s, g, h), best);
            }
        }
    }
    v
}

pub type Key = ((i64, i64), (i64, i64), usize);

/// Fits `Q(s, g, h, a)` by averaging relabeled targets, sweeping `h` upward
/// so every bootstrap value is final when read. `V` is the max over actions
/// present in the relabeled data.
pub fn fitted_values(d: &Dataset, draws: usize) -> HashMap<Key, f64> {
    let cfg = TrainConfig {
        n: N,
        beta: BETA,
        eta: 0.0,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // (s, g, h, a) -> (sum r_g, count, s')
    let mut acc: HashMap<(Key, usize), (f64, usize, (i64, i64))> = HashMap::new();
    for i in 0..d.transitions().len() {
        for _ in 0..draws {
            let x = her_relabel(d, i, &mut rng, None, &cfg);
            let key = ((cell_of(&x.s), cell_of(&x.g), x.h), action_of(&x.a));
            let e = acc.entry(key).or_insert((0.0, 0, cell_of(&x.sp)));
            e.0 += x.r_g;
            e.1 += 1;
        }
    }
    let mut v: HashMap<Key, f64> = HashMap::new();
    for h in 0..N {
        for (&((s, g, hh), _), &(sum, count, sp)) in &acc {
            if hh != h {
                continue;
            }
            let next = if h == 0 {
                0.0
            } else {
                *v.get(&(sp, g, h - 1)).expect("successor triple missing from data")
            };
            let q = segment_backup(sum / count as f64, h, next);
            let e = v.entry((s, g, h)).or_insert(f64::NEG_INFINITY);
            *e = e.max(q);
        }
    }
    v
}


/// Largest absolute gap between the relabeled fit and the oracle over every
/// in-dataset triple, and the number of triples.
pub fn max_oracle_error(draws: usize) -> (f64, usize) {
    let fitted = fitted_values(&exhaustive_dataset(), draws);
    let oracle = value_iteration();
    let worst = fitted.iter().map(|(k, v)| (v - oracle[k]).abs()).fold(0.0, f64::max);
    (worst, fitted.len())
}
