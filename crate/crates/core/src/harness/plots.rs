use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

struct Figure {
    name: &'static str,
    title: &'static str,
    ylabel: &'static str,
    /// 1-based aggregate column plotted against iteration.
    column: usize,
    modes: &'static [&'static str],
}

const FIGURES: [Figure; 4] = [
    Figure {
        name: "hf_lf_ratio",
        title: "Mean ratio of high- to low-fidelity samples",
        ylabel: "HF / LF samples",
        column: 8,
        modes: &["mf"],
    },
    Figure {
        name: "hf_samples",
        title: "Mean number of high-fidelity samples",
        ylabel: "HF samples",
        column: 4,
        modes: &["sf", "mf"],
    },
    Figure {
        name: "hf_failures",
        title: "Mean number of high-fidelity failures",
        ylabel: "failures",
        column: 7,
        modes: &["sf", "mf"],
    },
    Figure {
        name: "failures_per_sample",
        title: "Mean failures per high-fidelity sample",
        ylabel: "failures / HF sample",
        column: 9,
        modes: &["sf", "mf"],
    },
];

fn script(fig: &Figure, r_inc_labels: &[String]) -> String {
    let mut plots = Vec::new();
    for mode in fig.modes {
        for r in r_inc_labels {
            plots.push(format!(
                "  'aggregate.csv' using 1:(strcol(3) eq '{mode}' && strcol(2) eq '{r}' ? ${} : 1/0) \
                 with lines title '{mode} R_inc={r}'",
                fig.column
            ));
        }
    }
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 900,600\n\
         set output '{name}.png'\n\
         set title '{title}'\n\
         set xlabel 'iteration'\n\
         set ylabel '{ylabel}'\n\
         set key outside right\n\
         plot \\\n{}\n",
        plots.join(", \\\n"),
        name = fig.name,
        title = fig.title,
        ylabel = fig.ylabel,
    )
}

/// Writes one gnuplot script per figure next to `aggregate.csv` in `dir`.
pub fn write_plot_scripts(dir: &Path, r_inc_labels: &[String]) -> Result<Vec<PathBuf>> {
    FIGURES
        .iter()
        .map(|fig| {
            let path = dir.join(format!("{}.gp", fig.name));
            std::fs::write(&path, script(fig, r_inc_labels)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
