use std::path::Path;

use super::{GeoError, LatLon, StationMeta};

/// Number of interior samples used to approximate the ridge supremum.
pub const RIDGE_SAMPLES: usize = 128;

/// Regular lat/lon elevation grid. Node `(r, c)` sits at
/// `(lat0 + r * dlat, lon0 + c * dlon)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub nrows: usize,
    pub ncols: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub elevations: Vec<f64>,
}

/// Terrain heights in metres, or flat terrain everywhere.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum ElevationField {
    #[default]
    Flat,
    Raster(Raster),
}

impl Raster {
    pub fn new(
        nrows: usize,
        ncols: usize,
        lat0: f64,
        lon0: f64,
        dlat: f64,
        dlon: f64,
        elevations: Vec<f64>,
    ) -> Result<Self, GeoError> {
        if nrows < 2 || ncols < 2 {
            return Err(GeoError::Parse("raster needs at least 2x2 nodes".into()));
        }
        if dlat == 0.0 || dlon == 0.0 || !dlat.is_finite() || !dlon.is_finite() {
            return Err(GeoError::Parse("raster resolution must be non-zero".into()));
        }
        if elevations.len() != nrows * ncols {
            return Err(GeoError::Parse(format!(
                "raster header says {nrows}x{ncols} but {} values follow",
                elevations.len()
            )));
        }
        Ok(Self {
            nrows,
            ncols,
            lat0,
            lon0,
            dlat,
            dlon,
            elevations,
        })
    }

    /// Bilinear interpolation; `None` outside the grid.
    pub fn sample(&self, p: LatLon) -> Option<f64> {
        let fr = (p.lat - self.lat0) / self.dlat;
        let fc = (p.lon - self.lon0) / self.dlon;
        let eps = 1e-9;
        let max_r = (self.nrows - 1) as f64;
        let max_c = (self.ncols - 1) as f64;
        if !(fr >= -eps && fr <= max_r + eps && fc >= -eps && fc <= max_c + eps) {
            return None;
        }
        let fr = fr.clamp(0.0, max_r);
        let fc = fc.clamp(0.0, max_c);
        let r0 = (fr.floor() as usize).min(self.nrows - 2);
        let c0 = (fc.floor() as usize).min(self.ncols - 2);
        let (tr, tc) = (fr - r0 as f64, fc - c0 as f64);
        let z = |r: usize, c: usize| self.elevations[r * self.ncols + c];
        let top = z(r0, c0) * (1.0 - tc) + z(r0, c0 + 1) * tc;
        let bottom = z(r0 + 1, c0) * (1.0 - tc) + z(r0 + 1, c0 + 1) * tc;
        Some(top * (1.0 - tr) + bottom * tr)
    }
}

impl ElevationField {
    /// Parses the plain-text raster format: a header line
    /// `nrows ncols lat0 lon0 dlat dlon` then row-major elevations.
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| GeoError::Parse(format!("elevation grid: missing {what}")))
        };
        let nrows: usize = next("nrows")?
            .parse()
            .map_err(|e| GeoError::Parse(format!("nrows: {e}")))?;
        let ncols: usize = next("ncols")?
            .parse()
            .map_err(|e| GeoError::Parse(format!("ncols: {e}")))?;
        let mut header = [0.0; 4];
        for (slot, name) in header.iter_mut().zip(["lat0", "lon0", "dlat", "dlon"]) {
            *slot = next(name)?
                .parse()
                .map_err(|e| GeoError::Parse(format!("{name}: {e}")))?;
        }
        let elevations = tokens
            .map(|t| t.parse::<f64>().map_err(|e| GeoError::Parse(format!("elevation value `{t}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::Raster(Raster::new(
            nrows, ncols, header[0], header[1], header[2], header[3], elevations,
        )?))
    }

    /// Reads a raster file, or returns [`ElevationField::Flat`] when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, GeoError> {
        match path {
            None => Ok(Self::Flat),
            Some(p) => Self::parse(&std::fs::read_to_string(p)?),
        }
    }

    pub fn height(&self, p: LatLon) -> Result<f64, GeoError> {
        match self {
            Self::Flat => Ok(0.0),
            Self::Raster(r) => r.sample(p).ok_or(GeoError::Coverage { lat: p.lat, lon: p.lon }),
        }
    }
}

/// Highest terrain on the straight lat/lon segment between two stations,
/// relative to the higher endpoint. Positive values mean a barrier.
pub fn ridge_height(a: &StationMeta, b: &StationMeta, field: &ElevationField) -> Result<f64, GeoError> {
    let raster = match field {
        ElevationField::Flat => return Ok(0.0),
        ElevationField::Raster(r) => r,
    };
    let at = |p: LatLon| raster.sample(p).ok_or(GeoError::Coverage { lat: p.lat, lon: p.lon });
    // The raster is a lat/lon rectangle, so covering both endpoints covers the segment.
    let ha = at(a.position())?;
    let hb = at(b.position())?;
    let mut sup = f64::NEG_INFINITY;
    for k in 1..=RIDGE_SAMPLES {
        let lambda = k as f64 / (RIDGE_SAMPLES + 1) as f64;
        let p = LatLon::new(
            lambda * a.lat + (1.0 - lambda) * b.lat,
            lambda * a.lon + (1.0 - lambda) * b.lon,
        );
        sup = sup.max(at(p)?);
    }
    Ok(sup - ha.max(hb))
}
