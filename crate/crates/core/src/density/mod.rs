//! Volumetric density over the body shell: field representations,
//! emission–absorption rendering with expected depth, and geometry training.

mod field;
mod posed;
mod render;
mod train;

pub use field::{AnalyticField, DensityField, DensityMlp, FieldPoint, FieldVars, SampleBatch, SdfFn, VoxelGrid};
pub use posed::{render_camera, render_camera_refined, DepthRefine, DensityQuery, DistanceBound, PosedField, Shell, ViewRender, WorldGrid};
pub use render::{composite, composite_batch, intervals, render_ray, sample_ray, Ray, RenderOutput, Sampling, OPACITY_THRESHOLD};
pub use train::{
    evaluate_geometry, geometry_loss, hard_loss, prepare_geometry, train_geometry, EpochStats, GeometryTrainConfig,
    GeometryView, GeometryWeights, LossTerms, PreparedGeometry,
};
