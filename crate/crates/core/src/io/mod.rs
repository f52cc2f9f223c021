//! Frame loading, flow files, color rendering and iteration traces.

mod colorize;
mod flo;
mod frames;
mod trace;

pub use colorize::{colorize, flow_color, save_png, speed_quantile};
pub use flo::{
    decode_flo, encode_flo, flow_file_name, list_flow_files, read_flo, read_flow, write_flo,
    write_flow, FlowFrame, FLO_MAGIC,
};
pub use frames::{
    frame_image, load_frames, load_sequence, read_frame, write_frames, FrameSet, Window,
    DEFAULT_WINDOW,
};
pub use trace::{read_trace, trace_records, write_trace, TraceRecord, TRACE_HEADER};
