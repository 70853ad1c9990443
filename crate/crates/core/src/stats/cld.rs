//! Compact letter display by insert-and-absorb.

use std::collections::BTreeSet;

/// Letters for each model (in matrix order). `ranking` lists matrix indices
/// best first; it fixes which column receives `a`, `b`, ...
pub fn compact_letter_display(adj_p: &[Vec<f64>], alpha: f64, ranking: &[usize]) -> Vec<String> {
    let k = adj_p.len();
    let mut columns: Vec<BTreeSet<usize>> = vec![(0..k).collect()];
    for i in 0..k {
        for j in i + 1..k {
            if adj_p[i][j] >= alpha {
                continue;
            }
            let mut next = Vec::with_capacity(columns.len() + 1);
            for col in columns {
                if col.contains(&i) && col.contains(&j) {
                    let mut a = col.clone();
                    a.remove(&i);
                    let mut b = col;
                    b.remove(&j);
                    next.push(a);
                    next.push(b);
                } else {
                    next.push(col);
                }
            }
            columns = absorb(next);
        }
    }
    let mut position = vec![usize::MAX; k];
    ranking.iter().enumerate().for_each(|(p, &m)| position[m] = p);
    let key = |c: &BTreeSet<usize>| {
        let mut v: Vec<usize> = c.iter().map(|&m| position[m]).collect();
        v.sort_unstable();
        v
    };
    columns.sort_by_key(key);
    let mut letters = vec![String::new(); k];
    for (n, col) in columns.iter().enumerate() {
        let l = letter(n);
        col.iter().for_each(|&m| letters[m].push_str(&l));
    }
    letters
}

fn absorb(columns: Vec<BTreeSet<usize>>) -> Vec<BTreeSet<usize>> {
    let mut kept: Vec<BTreeSet<usize>> = Vec::with_capacity(columns.len());
    for (i, c) in columns.iter().enumerate() {
        if c.is_empty() {
            continue;
        }
        let dominated = columns.iter().enumerate().any(|(j, o)| j != i && c.is_subset(o) && (c.len() < o.len() || j < i));
        if !dominated {
            kept.push(c.clone());
        }
    }
    kept
}

fn letter(n: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    if n < 26 {
        (ALPHABET[n] as char).to_string()
    } else {
        format!("{}{}", letter(n / 26 - 1), ALPHABET[n % 26] as char)
    }
}

/// Checks both coverage laws: models sharing a letter are not
/// significantly different, and every non-significant pair shares one.
pub fn cld_is_valid(letters: &[String], adj_p: &[Vec<f64>], alpha: f64) -> bool {
    let sets: Vec<BTreeSet<char>> = letters.iter().map(|l| l.chars().collect()).collect();
    for i in 0..letters.len() {
        for j in i + 1..letters.len() {
            let share = !sets[i].is_disjoint(&sets[j]);
            let significant = adj_p[i][j] < alpha;
            if share == significant {
                return false;
            }
        }
    }
    true
}
