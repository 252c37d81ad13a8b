//! Decoding of 4-channel residential plan images into semantic label grids.
//!
//! Plan images carry their annotation in four 8-bit channels: channel 1 marks
//! exterior walls and front doors, channel 2 encodes the space type of every
//! pixel (13 original space types merged down to 7 plus the four structural
//! classes), channel 3 stores a per-type repetition index, and the alpha
//! channel masks interior versus exterior area. This module turns such images
//! into [`RasterPlan`] values, recolors them with the merged palette, and
//! resamples them by integer factors.

use std::path::Path;

use image::{DynamicImage, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the 11 merged semantic classes a plan pixel can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemanticLabel {
    Living,
    Bedroom,
    Kitchen,
    Bathroom,
    Balcony,
    Storage,
    ExternalArea,
    ExteriorWall,
    FrontDoor,
    InteriorWall,
    InteriorDoor,
}

/// The six room classes that become knowledge-graph nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoomClass {
    #[serde(rename = "living_room")]
    Living,
    #[serde(rename = "bedroom")]
    Bedroom,
    #[serde(rename = "kitchen")]
    Kitchen,
    #[serde(rename = "bathroom")]
    Bathroom,
    #[serde(rename = "balcony")]
    Balcony,
    #[serde(rename = "storage")]
    Storage,
}

impl RoomClass {
    pub const ALL: [RoomClass; 6] = [
        RoomClass::Living,
        RoomClass::Bedroom,
        RoomClass::Kitchen,
        RoomClass::Bathroom,
        RoomClass::Balcony,
        RoomClass::Storage,
    ];

    /// Name used in graph documents and prompt tokens.
    pub fn name(self) -> &'static str {
        match self {
            RoomClass::Living => "living_room",
            RoomClass::Bedroom => "bedroom",
            RoomClass::Kitchen => "kitchen",
            RoomClass::Bathroom => "bathroom",
            RoomClass::Balcony => "balcony",
            RoomClass::Storage => "storage",
        }
    }

    pub fn from_name(name: &str) -> Option<RoomClass> {
        RoomClass::ALL.iter().copied().find(|c| c.name() == name)
    }

    pub fn label(self) -> SemanticLabel {
        match self {
            RoomClass::Living => SemanticLabel::Living,
            RoomClass::Bedroom => SemanticLabel::Bedroom,
            RoomClass::Kitchen => SemanticLabel::Kitchen,
            RoomClass::Bathroom => SemanticLabel::Bathroom,
            RoomClass::Balcony => SemanticLabel::Balcony,
            RoomClass::Storage => SemanticLabel::Storage,
        }
    }
}

impl std::fmt::Display for RoomClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 11] = [
        SemanticLabel::Living,
        SemanticLabel::Bedroom,
        SemanticLabel::Kitchen,
        SemanticLabel::Bathroom,
        SemanticLabel::Balcony,
        SemanticLabel::Storage,
        SemanticLabel::ExternalArea,
        SemanticLabel::ExteriorWall,
        SemanticLabel::FrontDoor,
        SemanticLabel::InteriorWall,
        SemanticLabel::InteriorDoor,
    ];

    /// The room class of this label, or `None` for structural labels.
    pub fn room_class(self) -> Option<RoomClass> {
        match self {
            SemanticLabel::Living => Some(RoomClass::Living),
            SemanticLabel::Bedroom => Some(RoomClass::Bedroom),
            SemanticLabel::Kitchen => Some(RoomClass::Kitchen),
            SemanticLabel::Bathroom => Some(RoomClass::Bathroom),
            SemanticLabel::Balcony => Some(RoomClass::Balcony),
            SemanticLabel::Storage => Some(RoomClass::Storage),
            _ => None,
        }
    }

    pub fn color(self) -> [u8; 4] {
        SemanticPalette::color_of(self)
    }
}

/// The merged class palette: colors and raw channel-2 value sets per label.
///
/// Both directions are total over their stated domains and the color mapping
/// is injective, so recolored images decode back to the same label grid.
pub struct SemanticPalette;

/// (label, RGBA color, channel-2 values in the original dataset).
const PALETTE: [(SemanticLabel, [u8; 4], &[u8]); 11] = [
    (SemanticLabel::Living, [244, 242, 229, 255], &[0, 4, 10]),
    (SemanticLabel::Bedroom, [253, 244, 171, 255], &[1, 5, 6, 7, 8]),
    (SemanticLabel::Kitchen, [234, 216, 214, 255], &[2]),
    (SemanticLabel::Bathroom, [205, 233, 252, 255], &[3, 12]),
    (SemanticLabel::Balcony, [208, 216, 135, 255], &[9]),
    (SemanticLabel::Storage, [249, 222, 189, 255], &[11]),
    (SemanticLabel::ExternalArea, [0, 0, 0, 255], &[13]),
    (SemanticLabel::ExteriorWall, [79, 79, 79, 255], &[14]),
    (SemanticLabel::FrontDoor, [255, 225, 25, 255], &[15]),
    (SemanticLabel::InteriorWall, [128, 128, 128, 255], &[16]),
    (SemanticLabel::InteriorDoor, [255, 255, 255, 255], &[17]),
];

impl SemanticPalette {
    pub fn color_of(label: SemanticLabel) -> [u8; 4] {
        PALETTE.iter().find(|(l, _, _)| *l == label).unwrap().1
    }

    pub fn label_of_color(color: [u8; 4]) -> Option<SemanticLabel> {
        PALETTE.iter().find(|(_, c, _)| *c == color).map(|(l, _, _)| *l)
    }

    pub fn label_of_channel2(value: u8) -> Option<SemanticLabel> {
        PALETTE
            .iter()
            .find(|(_, _, vs)| vs.contains(&value))
            .map(|(l, _, _)| *l)
    }

    pub fn channel2_values_of(label: SemanticLabel) -> &'static [u8] {
        PALETTE.iter().find(|(l, _, _)| *l == label).unwrap().2
    }

    /// Representative channel-2 value used when synthesizing channel data.
    pub fn canonical_channel2(label: SemanticLabel) -> u8 {
        Self::channel2_values_of(label)[0]
    }
}

/// The four raw annotation channels of a plan image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanChannels {
    /// Channel 1: exterior walls and front doors.
    pub boundary: Vec<u8>,
    /// Channel 2: space types, interior walls and doors.
    pub space: Vec<u8>,
    /// Channel 3: per-type repetition index.
    pub repetition: Vec<u8>,
    /// Alpha: interior mask; zero marks exterior area.
    pub interior: Vec<u8>,
}

/// A decoded plan: per-pixel semantic labels plus the source channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterPlan {
    width: u32,
    height: u32,
    labels: Vec<SemanticLabel>,
    channels: PlanChannels,
}

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("expected a 4-channel image, found {0} channels")]
    ChannelCountMismatch(u8),
    #[error("unknown channel-2 value {value} inside the interior mask at ({x}, {y})")]
    UnknownChannel2Value { value: u8, x: u32, y: u32 },
    #[error("grid size {actual} does not match {width}x{height}")]
    DimensionMismatch { width: u32, height: u32, actual: usize },
    #[error("upsample factor must be at least 1")]
    ZeroFactor,
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl RasterError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            RasterError::ChannelCountMismatch(_) => "ChannelCountMismatch",
            RasterError::UnknownChannel2Value { .. } => "UnknownChannel2Value",
            RasterError::DimensionMismatch { .. } => "DimensionMismatch",
            RasterError::ZeroFactor => "ZeroFactor",
            RasterError::Image(_) => "ImageError",
        }
    }
}

impl RasterPlan {
    /// Builds a plan from a label grid, synthesizing consistent channel data.
    ///
    /// Channel 2 gets each label's representative value, channel 1 marks
    /// exterior walls and front doors, and the interior mask is zero exactly
    /// on external-area pixels.
    pub fn from_label_grid(
        width: u32,
        height: u32,
        labels: Vec<SemanticLabel>,
    ) -> Result<RasterPlan, RasterError> {
        if labels.len() != (width as usize) * (height as usize) {
            return Err(RasterError::DimensionMismatch {
                width,
                height,
                actual: labels.len(),
            });
        }
        let boundary = labels
            .iter()
            .map(|l| match l {
                SemanticLabel::ExteriorWall | SemanticLabel::FrontDoor => 255,
                _ => 0,
            })
            .collect();
        let space = labels
            .iter()
            .map(|l| SemanticPalette::canonical_channel2(*l))
            .collect();
        let interior = labels
            .iter()
            .map(|l| if *l == SemanticLabel::ExternalArea { 0 } else { 255 })
            .collect();
        Ok(RasterPlan {
            width,
            height,
            channels: PlanChannels {
                boundary,
                space,
                repetition: vec![0; labels.len()],
                interior,
            },
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[SemanticLabel] {
        &self.labels
    }

    pub fn label(&self, x: u32, y: u32) -> SemanticLabel {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn channels(&self) -> &PlanChannels {
        &self.channels
    }

    /// True where the alpha mask marks interior area.
    pub fn is_interior(&self, x: u32, y: u32) -> bool {
        self.channels.interior[(y * self.width + x) as usize] != 0
    }

    pub fn interior_pixel_count(&self) -> u64 {
        self.channels.interior.iter().filter(|a| **a != 0).count() as u64
    }

    /// Pixel count per label over the whole grid.
    pub fn label_histogram(&self) -> Vec<(SemanticLabel, u64)> {
        SemanticLabel::ALL
            .iter()
            .map(|l| (*l, self.labels.iter().filter(|p| *p == l).count() as u64))
            .collect()
    }
}

/// Decodes a 4-channel plan image into a [`RasterPlan`].
///
/// Exterior pixels (alpha mask zero) always decode to the external-area
/// label, whatever their channel-2 value says; an unknown channel-2 value
/// inside the interior mask is treated as data corruption and rejected.
pub fn decode_plan(image: &DynamicImage) -> Result<RasterPlan, RasterError> {
    let channel_count = image.color().channel_count();
    if channel_count != 4 {
        return Err(RasterError::ChannelCountMismatch(channel_count));
    }
    let rgba = image.to_rgba8();
    decode_rgba_plan(&rgba)
}

/// Decodes an RGBA carrier image (R = channel 1, G = channel 2, B = channel 3,
/// A = interior mask).
pub fn decode_rgba_plan(rgba: &RgbaImage) -> Result<RasterPlan, RasterError> {
    let (width, height) = rgba.dimensions();
    let n = (width as usize) * (height as usize);
    let mut boundary = Vec::with_capacity(n);
    let mut space = Vec::with_capacity(n);
    let mut repetition = Vec::with_capacity(n);
    let mut interior = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let p = rgba.get_pixel(x, y).0;
            boundary.push(p[0]);
            space.push(p[1]);
            repetition.push(p[2]);
            interior.push(p[3]);
            let label = if p[3] == 0 {
                SemanticLabel::ExternalArea
            } else {
                match SemanticPalette::label_of_channel2(p[1]) {
                    Some(l) => l,
                    None => {
                        return Err(RasterError::UnknownChannel2Value { value: p[1], x, y })
                    }
                }
            };
            labels.push(label);
        }
    }
    Ok(RasterPlan {
        width,
        height,
        labels,
        channels: PlanChannels {
            boundary,
            space,
            repetition,
            interior,
        },
    })
}

/// Reads a PNG from disk and decodes it.
pub fn load_plan(path: &Path) -> Result<RasterPlan, RasterError> {
    let image = image::open(path)?;
    decode_plan(&image)
}

/// Reads a plan in either encoding: the raw 4-channel form first, falling
/// back to the recolored palette form. Raw decoding takes precedence; its
/// error is reported when neither applies.
pub fn load_plan_any(path: &Path) -> Result<RasterPlan, RasterError> {
    let image = image::open(path)?;
    match decode_plan(&image) {
        Ok(plan) => Ok(plan),
        Err(raw_err) => match decode_recolored(&image.to_rgba8()) {
            Ok(plan) => Ok(plan),
            Err(_) => Err(raw_err),
        },
    }
}

/// Writes the raw channels back into an RGBA carrier, the inverse of
/// [`decode_rgba_plan`]. Useful for producing plan files from synthetic
/// label grids.
pub fn encode_plan(plan: &RasterPlan) -> RgbaImage {
    let mut out = RgbaImage::new(plan.width, plan.height);
    for y in 0..plan.height {
        for x in 0..plan.width {
            let i = (y * plan.width + x) as usize;
            out.put_pixel(
                x,
                y,
                image::Rgba([
                    plan.channels.boundary[i],
                    plan.channels.space[i],
                    plan.channels.repetition[i],
                    plan.channels.interior[i],
                ]),
            );
        }
    }
    out
}

/// Renders the plan with the merged palette colors.
pub fn recolor(plan: &RasterPlan) -> RgbaImage {
    let mut out = RgbaImage::new(plan.width, plan.height);
    for y in 0..plan.height {
        for x in 0..plan.width {
            out.put_pixel(x, y, image::Rgba(plan.label(x, y).color()));
        }
    }
    out
}

/// Decodes a recolored image back into a plan via the inverse palette.
pub fn decode_recolored(rgba: &RgbaImage) -> Result<RasterPlan, RasterError> {
    let (width, height) = rgba.dimensions();
    let mut labels = Vec::with_capacity((width as usize) * (height as usize));
    for y in 0..height {
        for x in 0..width {
            let c = rgba.get_pixel(x, y).0;
            match SemanticPalette::label_of_color(c) {
                Some(l) => labels.push(l),
                None => return Err(RasterError::UnknownChannel2Value { value: c[1], x, y }),
            }
        }
    }
    RasterPlan::from_label_grid(width, height, labels)
}

/// Nearest-neighbor upsampling: every pixel becomes a `factor`x`factor`
/// block, so the label set and per-label pixel ratios are preserved exactly.
pub fn upsample(plan: &RasterPlan, factor: u32) -> Result<RasterPlan, RasterError> {
    if factor == 0 {
        return Err(RasterError::ZeroFactor);
    }
    let width = plan.width * factor;
    let height = plan.height * factor;
    let n = (width as usize) * (height as usize);
    let mut labels = Vec::with_capacity(n);
    let mut boundary = Vec::with_capacity(n);
    let mut space = Vec::with_capacity(n);
    let mut repetition = Vec::with_capacity(n);
    let mut interior = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let src = ((y / factor) * plan.width + x / factor) as usize;
            labels.push(plan.labels[src]);
            boundary.push(plan.channels.boundary[src]);
            space.push(plan.channels.space[src]);
            repetition.push(plan.channels.repetition[src]);
            interior.push(plan.channels.interior[src]);
        }
    }
    Ok(RasterPlan {
        width,
        height,
        labels,
        channels: PlanChannels {
            boundary,
            space,
            repetition,
            interior,
        },
    })
}
