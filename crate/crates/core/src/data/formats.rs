//! Binary file formats for epochs and images, plus PPM/PGM export.
//!
//! All integers and floats are little-endian.
//!
//! Epoch file (`UBPE`):
//! ```text
//! magic "UBPE" | version u32 | n_samples u32 | n_channels u32 | n_timepoints u32
//! | sample_rate_hz u32 | dtype u8 (1 = f16, 2 = f32) | subject (u32 len + UTF-8)
//! | image_ids u32 × n_samples | data (f16 or f32) × n_samples·n_channels·n_timepoints
//! ```
//!
//! Image raster (`UBPI`):
//! ```text
//! magic "UBPI" | h u32 | w u32 | channels u8 | f32 × h·w·channels (channel-major)
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use half::f16;

use super::epochs::{EpochTensor, StorageDtype};
use crate::binio::{self, io_err};
use crate::blur::Image;
use crate::error::{Result, UbpError};

const EPOCH_MAGIC: &[u8; 4] = b"UBPE";
const EPOCH_VERSION: u32 = 1;
const IMAGE_MAGIC: &[u8; 4] = b"UBPI";

pub fn write_epochs(w: &mut impl Write, e: &EpochTensor) -> Result<()> {
    let err = io_err("epoch file");
    (|| -> std::io::Result<()> {
        w.write_all(EPOCH_MAGIC)?;
        binio::write_u32(w, EPOCH_VERSION)?;
        for v in [e.n_samples, e.n_channels, e.n_timepoints] {
            binio::write_u32(w, v as u32)?;
        }
        binio::write_u32(w, e.sample_rate_hz)?;
        binio::write_u8(
            w,
            match e.storage {
                StorageDtype::F16 => 1,
                StorageDtype::F32 => 2,
            },
        )?;
        binio::write_str(w, &e.subject)?;
        let mut ids = Vec::with_capacity(e.image_ids.len() * 4);
        for id in &e.image_ids {
            ids.extend_from_slice(&id.to_le_bytes());
        }
        w.write_all(&ids)?;
        match e.storage {
            StorageDtype::F32 => binio::write_f32s(w, &e.data),
            StorageDtype::F16 => {
                let mut buf = Vec::with_capacity(e.data.len() * 2);
                for v in &e.data {
                    buf.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
                }
                w.write_all(&buf)
            }
        }
    })()
    .map_err(err)
}

pub fn read_epochs(r: &mut impl Read) -> Result<EpochTensor> {
    binio::read_magic(r, EPOCH_MAGIC, "epoch file")?;
    let version = binio::read_u32(r, "epoch header")?;
    if version != EPOCH_VERSION {
        return Err(UbpError::Format(format!("unsupported epoch file version {version}")));
    }
    let n_samples = binio::read_u32(r, "epoch header")? as usize;
    let n_channels = binio::read_u32(r, "epoch header")? as usize;
    let n_timepoints = binio::read_u32(r, "epoch header")? as usize;
    let sample_rate_hz = binio::read_u32(r, "epoch header")?;
    let storage = match binio::read_u8(r, "epoch header")? {
        1 => StorageDtype::F16,
        2 => StorageDtype::F32,
        other => return Err(UbpError::Format(format!("unknown epoch dtype tag {other}"))),
    };
    let subject = binio::read_str(r, "subject label")?;
    let mut image_ids = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        image_ids.push(binio::read_u32(r, "image ids")?);
    }
    let n = n_samples * n_channels * n_timepoints;
    let data = match storage {
        StorageDtype::F32 => binio::read_f32s(r, n, "epoch data")?,
        StorageDtype::F16 => {
            let mut buf = vec![0u8; n * 2];
            r.read_exact(&mut buf)
                .map_err(|e| UbpError::Format(format!("truncated epoch data: {e}")))?;
            buf.chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect()
        }
    };
    binio::expect_eof(r, "epoch file")?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(UbpError::Format("epoch data contains non-finite values".into()));
    }
    let mut e = EpochTensor::new(n_channels, n_timepoints, sample_rate_hz, image_ids, subject, data)
        .map_err(|e| UbpError::Format(e.to_string()))?;
    e.storage = storage;
    Ok(e)
}

pub fn save_epochs(path: &Path, e: &EpochTensor) -> Result<()> {
    let mut buf = Vec::new();
    write_epochs(&mut buf, e)?;
    fs::write(path, buf).map_err(|err| UbpError::io(path, err))
}

pub fn load_epochs(path: &Path) -> Result<EpochTensor> {
    let bytes = fs::read(path).map_err(|err| UbpError::io(path, err))?;
    read_epochs(&mut bytes.as_slice()).map_err(|e| with_path(e, path))
}

fn with_path(e: UbpError, path: &Path) -> UbpError {
    match e {
        UbpError::Format(msg) => UbpError::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub fn write_image(w: &mut impl Write, img: &Image) -> Result<()> {
    (|| -> std::io::Result<()> {
        w.write_all(IMAGE_MAGIC)?;
        binio::write_u32(w, img.height() as u32)?;
        binio::write_u32(w, img.width() as u32)?;
        binio::write_u8(w, img.channels() as u8)?;
        let vals: Vec<f32> = img.as_slice().iter().map(|&v| v as f32).collect();
        binio::write_f32s(w, &vals)
    })()
    .map_err(io_err("image raster"))
}

/// Reads a raster; values are promoted from `f32`.
pub fn read_image(r: &mut impl Read) -> Result<Image> {
    binio::read_magic(r, IMAGE_MAGIC, "image raster")?;
    let h = binio::read_u32(r, "image header")? as usize;
    let w = binio::read_u32(r, "image header")? as usize;
    let c = binio::read_u8(r, "image header")? as usize;
    let vals = binio::read_f32s(r, h * w * c, "image data")?;
    binio::expect_eof(r, "image raster")?;
    Image::new(h, w, c, vals.into_iter().map(f64::from).collect())
        .map_err(|e| UbpError::Format(e.to_string()))
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let mut buf = Vec::new();
    write_image(&mut buf, img)?;
    fs::write(path, buf).map_err(|err| UbpError::io(path, err))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|err| UbpError::io(path, err))?;
    read_image(&mut bytes.as_slice()).map_err(|e| with_path(e, path))
}

/// Binary PGM (1 channel) or PPM (3 channels), 8 bits per sample.
pub fn write_pnm(w: &mut impl Write, img: &Image) -> Result<()> {
    let (h, wd, c) = (img.height(), img.width(), img.channels());
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut buf = format!("{magic}\n{wd} {h}\n255\n").into_bytes();
    for r in 0..h {
        for col in 0..wd {
            for ch in 0..c {
                buf.push((img.get(ch, r, col) * 255.0).round() as u8);
            }
        }
    }
    w.write_all(&buf).map_err(io_err("PNM image"))
}

pub fn read_pnm(r: &mut impl Read) -> Result<Image> {
    let mut reader = BufReader::new(r);
    let mut tokens = Vec::new();
    // header: magic, width, height, maxval; '#' comments allowed
    while tokens.len() < 4 {
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| UbpError::Format(format!("PNM header: {e}")))?;
        if n == 0 {
            return Err(UbpError::Format("truncated PNM header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(UbpError::Format(format!("unsupported PNM type {other}"))),
    };
    let parse = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| UbpError::Format(format!("bad PNM header field {t:?}")))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(UbpError::Format(format!("PNM maxval {maxval} unsupported")));
    }
    let mut raw = vec![0u8; w * h * channels];
    reader
        .read_exact(&mut raw)
        .map_err(|e| UbpError::Format(format!("truncated PNM data: {e}")))?;
    let mut data = vec![0.0; raw.len()];
    for r in 0..h {
        for c in 0..w {
            for ch in 0..channels {
                data[(ch * h + r) * w + c] = f64::from(raw[(r * w + c) * channels + ch]) / maxval as f64;
            }
        }
    }
    Image::new(h, w, channels, data).map_err(|e| UbpError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;
    use proptest::prelude::*;

    fn random_epochs(seed: u64, storage: StorageDtype) -> EpochTensor {
        let mut rng = Rng::new(seed);
        let (n, c, t) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(7));
        let data = (0..n * c * t).map(|_| rng.normal() as f32).collect();
        let ids = (0..n).map(|_| rng.below(100) as u32).collect();
        let mut e = EpochTensor::new(c, t, 250, ids, "sub-01 ü", data).unwrap();
        e.storage = storage;
        e
    }

    proptest! {
        #[test]
        fn epoch_files_round_trip_bytes(seed in any::<u64>(), half in any::<bool>()) {
            let storage = if half { StorageDtype::F16 } else { StorageDtype::F32 };
            let e = random_epochs(seed, storage);
            let mut first = Vec::new();
            write_epochs(&mut first, &e).unwrap();
            let back = read_epochs(&mut first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_epochs(&mut second, &back).unwrap();
            prop_assert_eq!(&first, &second);
            if !half {
                prop_assert_eq!(back, e);
            }
        }
    }

    #[test]
    fn epoch_header_layout() {
        let e = EpochTensor::new(2, 1, 250, vec![9], "ab", vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_epochs(&mut buf, &e).unwrap();
        assert_eq!(&buf[..4], b"UBPE");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(buf[24], 2);
        assert_eq!(&buf[25..29], &2u32.to_le_bytes());
        assert_eq!(&buf[29..31], b"ab");
        assert_eq!(&buf[31..35], &9u32.to_le_bytes());
        assert_eq!(&buf[35..39], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 43);
    }

    #[test]
    fn corrupt_epoch_files() {
        let e = random_epochs(1, StorageDtype::F32);
        let mut buf = Vec::new();
        write_epochs(&mut buf, &e).unwrap();
        assert!(read_epochs(&mut &buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_epochs(&mut extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_epochs(&mut bad.as_slice()), Err(UbpError::Format(_))));
    }

    #[test]
    fn image_round_trip() {
        let mut rng = Rng::new(4);
        let img = Image::new(3, 5, 3, (0..45).map(|_| rng.uniform(0.0, 1.0) as f32 as f64).collect()).unwrap();
        let mut buf = Vec::new();
        write_image(&mut buf, &img).unwrap();
        assert_eq!(read_image(&mut buf.as_slice()).unwrap(), img);
        assert_eq!(buf.len(), 4 + 4 + 4 + 1 + 45 * 4);
    }

    #[test]
    fn pnm_round_trip() {
        for channels in [1, 3] {
            let data: Vec<f64> = (0..4 * 6 * channels).map(|v| (v % 256) as f64 / 255.0).collect();
            let img = Image::new(4, 6, channels, data).unwrap();
            let mut buf = Vec::new();
            write_pnm(&mut buf, &img).unwrap();
            let back = read_pnm(&mut buf.as_slice()).unwrap();
            for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let with_comment = b"P5\n# hi\n2 1\n255\n\x00\xff";
        let img = read_pnm(&mut &with_comment[..]).unwrap();
        assert_eq!(img.as_slice(), &[0.0, 1.0]);
    }
}
