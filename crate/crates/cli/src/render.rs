//! Field rendering: binary PGM heatmaps and raw CSV dumps.

use swetopo_core::field::Field2D;

/// Binary P5 with maxval 255. Values map linearly from [min, max] onto
/// [0, 255] (pixel = floor of the scaled value); a constant field maps to all
/// zeros and the comment carries a `degenerate-range` marker. The comment
/// line always records the min and max used for the mapping. Image height is
/// the field's nx (rows), width its ny (columns).
pub fn to_pgm(field: &Field2D, negate: bool) -> Vec<u8> {
    let values: Vec<f64> = if negate {
        field.values().iter().map(|v| -v).collect()
    } else {
        field.values().to_vec()
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = min == max;

    let mut out = Vec::new();
    out.extend_from_slice(b"P5\n");
    let comment = if degenerate {
        format!("# min={min} max={max} degenerate-range\n")
    } else {
        format!("# min={min} max={max}\n")
    };
    out.extend_from_slice(comment.as_bytes());
    out.extend_from_slice(format!("{} {}\n255\n", field.ny(), field.nx()).as_bytes());
    if degenerate {
        out.extend(std::iter::repeat_n(0u8, values.len()));
    } else {
        let span = max - min;
        for v in values {
            let px = (255.0 * (v - min) / span).floor();
            out.push(px.clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// One line per grid row, comma-separated shortest round-trip decimals.
pub fn to_csv(field: &Field2D) -> String {
    let mut out = String::new();
    for ix in 0..field.nx() {
        for iy in 0..field.ny() {
            if iy > 0 {
                out.push(',');
            }
            out.push_str(&field.get(ix, iy).to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
pub fn parse_csv(text: &str) -> Result<Field2D, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| format!("csv line {}: {e}", i + 1))?);
    }
    if rows.is_empty() {
        return Err("csv holds no rows".into());
    }
    let ny = rows[0].len();
    if rows.iter().any(|r| r.len() != ny) {
        return Err("csv rows have uneven lengths".into());
    }
    let nx = rows.len();
    Ok(Field2D::from_vec(nx, ny, rows.concat()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_pixel_mapping_matches_hand_arithmetic() {
        let f = Field2D::from_vec(2, 2, vec![0.0, 1.0, 0.5, 0.25]);
        let pgm = to_pgm(&f, false);
        let pixels = &pgm[pgm.len() - 4..];
        assert_eq!(pixels, &[0u8, 255, 127, 63]);
        let header = String::from_utf8_lossy(&pgm[..pgm.len() - 4]);
        assert!(header.starts_with("P5\n"));
        assert!(header.contains("min=0 max=1"));
        assert!(header.contains("2 2\n255\n"));
    }

    #[test]
    fn degenerate_range_maps_to_zero_with_marker() {
        let f = Field2D::constant(2, 3, 4.2);
        let pgm = to_pgm(&f, false);
        let header = String::from_utf8_lossy(&pgm[..pgm.len() - 6]);
        assert!(header.contains("degenerate-range"));
        assert!(pgm[pgm.len() - 6..].iter().all(|&b| b == 0));
    }

    #[test]
    fn negate_flips_extremes() {
        let f = Field2D::from_vec(1, 2, vec![10.0, 20.0]);
        let plain = to_pgm(&f, false);
        let negated = to_pgm(&f, true);
        assert_eq!(&plain[plain.len() - 2..], &[0u8, 255]);
        assert_eq!(&negated[negated.len() - 2..], &[255u8, 0]);
        assert!(String::from_utf8_lossy(&negated).contains("min=-20 max=-10"));
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let f = Field2D::from_fn(3, 4, |ix, iy| {
            (ix as f64 * 0.37 - iy as f64 * 1.21).sin() * 1e-7
        });
        let back = parse_csv(&to_csv(&f)).unwrap();
        assert_eq!(back.shape(), f.shape());
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
