//! Self-contained SVG line chart for robustness sweeps: mean return per
//! perturbation level with a shaded 95 percent confidence band per kind.

use std::collections::BTreeMap;

/// One row of a sweep CSV.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub kind: String,
    pub level: f64,
    pub mean_return: f64,
    pub std_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl SweepRow {
    pub const HEADER: &'static str =
        "perturbation_kind,level,mean_return,std_error,ci95_low,ci95_high,episodes,seed";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.kind,
            self.level,
            self.mean_return,
            self.std_error,
            self.ci95_low,
            self.ci95_high,
            self.episodes,
            self.seed
        )
    }

    pub fn parse_csv(line: &str) -> Option<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return None;
        }
        Some(Self {
            kind: parts[0].to_string(),
            level: parts[1].parse().ok()?,
            mean_return: parts[2].parse().ok()?,
            std_error: parts[3].parse().ok()?,
            ci95_low: parts[4].parse().ok()?,
            ci95_high: parts[5].parse().ok()?,
            episodes: parts[6].parse().ok()?,
            seed: parts[7].parse().ok()?,
        })
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Renders return-versus-level curves with confidence bands. Rows are
/// grouped by perturbation kind; each kind becomes one line and one band.
pub fn render_sweep_chart(rows: &[SweepRow], title: &str) -> String {
    let mut by_kind: BTreeMap<String, Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        by_kind.entry(row.kind.clone()).or_default().push(row);
    }
    for group in by_kind.values_mut() {
        group.sort_by(|a, b| a.level.total_cmp(&b.level));
    }

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in rows {
        x_min = x_min.min(row.level);
        x_max = x_max.max(row.level);
        y_min = y_min.min(row.ci95_low);
        y_max = y_max.max(row.ci95_high);
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| MARGIN_T + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        escape(title)
    ));

    // Axes and ticks.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for i in 0..=5 {
        let fx = x_min + (x_max - x_min) * i as f64 / 5.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 5.0;
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/><text x=\"{0}\" y=\"{3}\" font-size=\"11\" text-anchor=\"middle\">{4:.2}</text>\n",
            sx(fx),
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0,
            HEIGHT - MARGIN_B + 18.0,
            fx
        ));
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/><text x=\"{3}\" y=\"{4}\" font-size=\"11\" text-anchor=\"end\">{5:.3}</text>\n",
            MARGIN_L - 5.0,
            sy(fy),
            MARGIN_L,
            MARGIN_L - 8.0,
            sy(fy) + 4.0,
            fy
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">perturbation level</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">mean return</text>\n",
        MARGIN_T + plot_h / 2.0
    ));

    for (idx, (kind, group)) in by_kind.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        // Confidence band: upper edge forward, lower edge back.
        let mut band = String::new();
        for row in group.iter() {
            band.push_str(&format!("{:.2},{:.2} ", sx(row.level), sy(row.ci95_high)));
        }
        for row in group.iter().rev() {
            band.push_str(&format!("{:.2},{:.2} ", sx(row.level), sy(row.ci95_low)));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.15\"/>\n",
            band.trim_end()
        ));
        let line: Vec<String> = group
            .iter()
            .map(|row| format!("{:.2},{:.2}", sx(row.level), sy(row.mean_return)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            line.join(" ")
        ));
        for row in group.iter() {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(row.level),
                sy(row.mean_return)
            ));
        }
        let legend_y = MARGIN_T + 16.0 + idx as f64 * 20.0;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"14\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_R + 16.0,
            legend_y - 11.0,
            WIDTH - MARGIN_R + 36.0,
            legend_y,
            escape(kind)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
