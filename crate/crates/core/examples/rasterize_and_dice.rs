//! Rasterize polygons with the even-odd rule at pixel centres and compare
//! them with the Dice similarity coefficient.
//!
//! Run: `cargo run --example rasterize_and_dice`

use clickqc::geometry::{contour_length, dice, parse_polygons, rasterize, write_polygons, Mask, Point, Polygon};

fn show(mask: &Mask) {
    for y in 0..mask.height() {
        let row: String = (0..mask.width()).map(|x| if mask.get(x, y) { '#' } else { '.' }).collect();
        println!("  {row}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let square =
        Polygon::new(vec![Point::new(2.0, 2.0), Point::new(8.0, 2.0), Point::new(8.0, 8.0), Point::new(2.0, 8.0)]);
    // Self-intersecting star: the even-odd rule leaves its core empty.
    let star = parse_polygons("5.5 0.5 8.5 9.5 0.5 3.5 10.5 3.5 2.5 9.5\n")?.remove(0);

    let a = rasterize(&square, 12, 12)?;
    let b = rasterize(&square.translate(Point::new(1.0, 1.0)), 12, 12)?;
    let s = rasterize(&star, 12, 12)?;

    println!("square ({} px, perimeter {}):", a.count(), contour_length(&square)?);
    show(&a);
    println!("star ({} px):", s.count());
    show(&s);
    println!("DSC(square, square shifted by 1 px) = {:.4}", dice(&a, &b)?);
    println!("DSC(square, star)                  = {:.4}", dice(&a, &s)?);
    println!("polygon file form:\n{}", write_polygons(&[square, star]));
    Ok(())
}
