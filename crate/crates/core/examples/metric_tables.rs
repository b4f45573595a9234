//! Metrics for reference confusion counts: a four-token matrix and a
//! threshold sweep of two-token endpoint matrices.

use duplex_dm::eval::{metrics, render_table, ConfusionMatrix};
use duplex_dm::token::ControlToken::{self, *};

fn main() {
    let m = ConfusionMatrix::from_counts(
        &ControlToken::ALL,
        vec![vec![926, 74, 0, 0], vec![11, 989, 0, 0], vec![1, 0, 999, 0], vec![0, 0, 0, 1000]],
    )
    .unwrap();
    print!("{}", render_table(&m, &metrics(&m).unwrap()));
    println!();

    let rows = [(300, [495, 37, 63, 945]), (500, [307, 17, 37, 1041]), (800, [218, 10, 35, 1056]), (1800, [128, 4, 32, 1076])];
    for (th, [a, b, c, d]) in rows {
        let m = ConfusionMatrix::from_counts(&[ContinueListening, StartSpeaking], vec![vec![a, b], vec![c, d]]).unwrap();
        let r = metrics(&m).unwrap();
        let cl = r.class(ContinueListening).unwrap();
        let ss = r.class(StartSpeaking).unwrap();
        println!(
            "{th:>5} ms  C-L r/p/f {:.4} {:.4} {:.4}  S-S r/p/f {:.4} {:.4} {:.4}  acc {:.4}",
            cl.recall, cl.precision, cl.f1, ss.recall, ss.precision, ss.f1, r.accuracy
        );
    }
}
