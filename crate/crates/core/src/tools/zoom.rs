use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::schema::{ParamKind, ParamSchema, ParamSpec};
use super::{Tool, ToolContext, ToolError, ToolOutput, ToolSpec, ZOOM_TOOL};
use crate::raster::ImageRef;

/// Pixel box `[x1, y1, x2, y2]`, right and bottom edges exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct ZoomRequest {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl From<[u32; 4]> for ZoomRequest {
    fn from([x1, y1, x2, y2]: [u32; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl From<ZoomRequest> for [u32; 4] {
    fn from(r: ZoomRequest) -> Self {
        [r.x1, r.y1, r.x2, r.y2]
    }
}

impl ZoomRequest {
    pub fn from_args(args: &Map<String, Value>) -> Result<Self, ToolError> {
        let arr: [u32; 4] = args
            .get("bbox_2d")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| ToolError::SchemaViolation("`bbox_2d` must be four nonnegative integers".into()))?;
        Ok(arr.into())
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), ToolError> {
        let bbox: [u32; 4] = (*self).into();
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(ToolError::DegenerateBbox(bbox));
        }
        if self.x2 > width || self.y2 > height {
            return Err(ToolError::BboxOutOfBounds { bbox, width, height });
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }
}

#[derive(Debug, Clone)]
pub struct ZoomResult {
    pub crop: ImageRef,
    pub width: u32,
    pub height: u32,
}

/// Crop `bbox` out of `image`. Purely local.
pub fn zoom(image: &ImageRef, bbox: ZoomRequest) -> Result<ZoomResult, ToolError> {
    let pixels = image.load().map_err(|e| ToolError::UnreadableImage(e.to_string()))?;
    bbox.validate(pixels.width(), pixels.height())?;
    let crop = image::imageops::crop_imm(pixels.as_ref(), bbox.x1, bbox.y1, bbox.width(), bbox.height()).to_image();
    let id = format!("{}#zoom[{},{},{},{}]", image.id(), bbox.x1, bbox.y1, bbox.x2, bbox.y2);
    Ok(ZoomResult { width: crop.width(), height: crop.height(), crop: ImageRef::from_rgb(id, crop) })
}

pub struct ZoomTool {
    spec: ToolSpec,
}

impl ZoomTool {
    pub fn new() -> Self {
        Self {
            spec: ToolSpec {
                name: ZOOM_TOOL.into(),
                description: "Crop and zoom into discriminative regions.".into(),
                parameters: ParamSchema::new(vec![ParamSpec {
                    name: "bbox_2d",
                    description: "[x1, y1, x2, y2] defines the area for fine-grained inspection.",
                    kind: ParamKind::IntArray { len: 4 },
                    required: true,
                }]),
            },
        }
    }
}

impl Default for ZoomTool {
    fn default() -> Self {
        Self::new()
    }
}

impl Tool for ZoomTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, args: &Map<String, Value>, ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        let bbox = ZoomRequest::from_args(args)?;
        let out = zoom(&ctx.image, bbox)?;
        let bbox_arr: [u32; 4] = bbox.into();
        Ok(ToolOutput {
            result: json!({
                "crop_id": out.crop.id(),
                "bbox_2d": bbox_arr,
                "width": out.width,
                "height": out.height,
            }),
            attachment: Some(out.crop),
        })
    }
}
