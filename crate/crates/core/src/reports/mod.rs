//! Figures, reports and the command implementations behind the `gla` binary.

mod analysis;
mod commands;
mod figure;

pub use analysis::{
    explain_frame, AblationFrameRow, AblationReport, ClassCamStats, ConditionMetrics, ExplainSettings,
    FrameExplanation, MetricDeltas, ModelView, EXPECTED_DIRECTION,
};
pub use commands::{
    cmd_ablate, cmd_eval, cmd_explain, cmd_synth, cmd_train, config_diff, explain_entries, resolve_config,
    AblateArgs, EvalArgs, ExplainArgs, SynthArgs, TrainArgs, TrainOverrides, CHECKPOINT_FILE, HELD_OUT, SEED_ENV,
};
pub use figure::{blend, frame_intensity, FigureMetadata, Panel, PanelFigure, OVERLAY_ALPHA, PANEL_GAP, PANEL_ORDER};
