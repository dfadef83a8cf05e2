//! Parse a clickstream log, split it into strokes and label each stroke as a
//! draw or a correction.
//!
//! Run: `cargo run --example parse_and_classify [path/to/session.clicks]`

use clickqc::clickstream::{
    canvas_clicks, classify_strokes, double_clicks, segment_strokes, zoom_count, Clickstream, MatchTolerance,
};

// A worker draws three sides of a square, lifts the mouse, continues from the
// same spot to close it, then drags one corner back onto the outline.
const LOG: &str = r#"{"format":"clickstream","version":1,"worker_id":"w0001","image_id":"img0001","canvas_width":64,"canvas_height":64,"image_width":32,"image_height":32}
{"t_ms":0,"cx":10.0,"cy":10.0,"ix":5.0,"iy":5.0,"kind":"mouse-down","target":"canvas"}
{"t_ms":16,"cx":40.0,"cy":10.0,"ix":20.0,"iy":5.0,"kind":"mouse-move","target":"canvas"}
{"t_ms":32,"cx":40.0,"cy":40.0,"ix":20.0,"iy":20.0,"kind":"mouse-move","target":"canvas"}
{"t_ms":48,"cx":10.0,"cy":40.0,"ix":5.0,"iy":20.0,"kind":"mouse-up","target":"canvas"}
{"t_ms":400,"cx":10.0,"cy":40.0,"ix":5.0,"iy":20.0,"kind":"mouse-down","target":"canvas"}
{"t_ms":420,"cx":10.0,"cy":10.0,"ix":5.0,"iy":5.0,"kind":"mouse-up","target":"canvas"}
{"t_ms":900,"cx":40.0,"cy":40.0,"ix":20.0,"iy":20.0,"kind":"mouse-down","target":"canvas"}
{"t_ms":930,"cx":42.0,"cy":42.0,"ix":21.0,"iy":21.0,"kind":"mouse-up","target":"canvas"}
{"t_ms":1500,"cx":70.0,"cy":30.0,"ix":35.0,"iy":15.0,"kind":"mouse-down","target":"save-button"}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => LOG.as_bytes().to_vec(),
    };
    let stream = Clickstream::parse(&raw)?;
    println!(
        "{} events over {} ms: {} canvas clicks, {} double clicks, {} zoom actions",
        stream.len(),
        stream.duration_ms(),
        canvas_clicks(&stream),
        double_clicks(&stream),
        zoom_count(&stream)
    );

    let seg = segment_strokes(&stream);
    println!("{} strokes, diagnostics {:?}", seg.strokes.len(), seg.diagnostics);
    let classes = classify_strokes(&seg.strokes, &stream, MatchTolerance::default());
    let mut labelled: Vec<(usize, &str, usize)> = classes
        .draws
        .iter()
        .map(|s| (s.down_index, "draw", s.moves.len()))
        .chain(classes.corrections.iter().map(|s| (s.down_index, "correction", s.moves.len())))
        .collect();
    labelled.sort_unstable();
    for (i, class, moves) in labelled {
        println!("  stroke at event {i:>3}: {class:<10} ({moves} moves)");
    }
    Ok(())
}
