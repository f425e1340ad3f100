//! Minimal SVG line plots for training curves; no external plotting
//! dependency. One chart holds several named series over a shared x axis
//! (epochs, 1-based).

/// One named curve.
pub struct Series<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

/// Render series as an SVG line chart. Returns a self-contained SVG document.
pub fn line_chart(title: &str, series: &[Series], width: usize, height: usize) -> String {
    let (ml, mr, mt, mb) = (46.0, 12.0, 28.0, 30.0);
    let plot_w = width as f64 - ml - mr;
    let plot_h = height as f64 - mt - mb;

    let max_len = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo).abs() < 1e-12 {
        hi = lo + 1.0;
    }

    let x_of = |i: usize| {
        if max_len <= 1 {
            ml + plot_w / 2.0
        } else {
            ml + plot_w * i as f64 / (max_len - 1) as f64
        }
    };
    let y_of = |v: f64| mt + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">{title}</text>\n",
        width as f64 / 2.0
    );
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"#333\"/>\n\
         <line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        mt + plot_h,
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    ));
    // Range labels.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
         text-anchor=\"end\">{hi:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
         text-anchor=\"end\">{lo:.3}</text>\n",
        ml - 4.0,
        mt + 4.0,
        ml - 4.0,
        mt + plot_h
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
         text-anchor=\"middle\">epoch</text>\n",
        ml + plot_w / 2.0,
        height as f64 - 8.0
    ));

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
             fill=\"{color}\">{}</text>\n",
            ml + plot_w - 90.0,
            mt + 14.0 * (si as f64 + 1.0),
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_renders_all_series() {
        let a = [1.0, 0.8, 0.6, 0.5];
        let b = [0.9, 0.85, 0.7, 0.65];
        let svg = line_chart("loss", &[Series { name: "train", values: &a }, Series { name: "val", values: &b }], 480, 300);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("train"));
        assert!(svg.contains("val"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn constant_series_does_not_divide_by_zero() {
        let svg = line_chart("flat", &[Series { name: "c", values: &[0.5; 3] }], 200, 100);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_chart_is_still_valid() {
        let svg = line_chart("empty", &[], 200, 100);
        assert!(svg.starts_with("<svg"));
    }
}
