//! SVG piano rolls: 64 columns of steps, 36 rows of pitch, pitch 0 at the
//! bottom.

use std::fmt::Write;

use crate::score::{Excerpt, NoteSlot, PriorGrid, PITCH_VALUES, STEPS};

const CELL: usize = 10;
const GENERATED: &str = "#2e9d4a";
const KEPT: &str = "#7a7a7a";

/// Renders `excerpt`. With `generated`, slots whose prior in that grid is not
/// determined are drawn green and the others grey; without it every note is
/// grey.
pub fn render_piano_roll(excerpt: &Excerpt, generated: Option<&PriorGrid>) -> String {
    let w = STEPS * CELL;
    let h = PITCH_VALUES * CELL;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(s, "<rect class=\"bg\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>");
    s.push_str("<g class=\"grid\" stroke-width=\"1\">\n");
    for step in 0..=STEPS {
        let x = step * CELL;
        let stroke = if step % 16 == 0 { "#888888" } else if step % 4 == 0 { "#cccccc" } else { "#eeeeee" };
        let _ = writeln!(s, "<line x1=\"{x}\" y1=\"0\" x2=\"{x}\" y2=\"{h}\" stroke=\"{stroke}\"/>");
    }
    for row in 0..=PITCH_VALUES {
        let y = row * CELL;
        let stroke = if (PITCH_VALUES - row) % 12 == 0 { "#888888" } else { "#eeeeee" };
        let _ = writeln!(s, "<line x1=\"0\" y1=\"{y}\" x2=\"{w}\" y2=\"{y}\" stroke=\"{stroke}\"/>");
    }
    s.push_str("</g>\n<g class=\"notes\">\n");
    for (i, slot) in excerpt.slots().iter().enumerate() {
        let NoteSlot::Note(n) = slot else { continue };
        let green = generated.is_some_and(|g| i < g.slot_count() && !g.get(i).is_determined());
        let (class, fill) = if green { ("generated", GENERATED) } else { ("kept", KEPT) };
        let x = n.onset as usize * CELL;
        let y = (PITCH_VALUES - 1 - n.pitch as usize) * CELL;
        let nw = n.duration as usize * CELL;
        let _ = writeln!(
            s,
            "<rect class=\"note {class}\" x=\"{x}\" y=\"{y}\" width=\"{nw}\" height=\"{CELL}\" fill=\"{fill}\" stroke=\"#000000\"/>"
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{Note, SlotPrior};

    fn note_rects(svg: &str) -> Vec<&str> {
        svg.lines().filter(|l| l.contains("class=\"note ")).collect()
    }

    #[test]
    fn empty_excerpt_draws_grid_only() {
        let svg = render_piano_roll(&Excerpt::empty(64), None);
        assert!(note_rects(&svg).is_empty());
        assert_eq!(svg.matches("<line").count(), 65 + 37);
    }

    #[test]
    fn note_coordinates() {
        let e = Excerpt::from_notes(&[Note::new(0, 0, 4).unwrap()], 64).unwrap();
        let svg = render_piano_roll(&e, None);
        let rects = note_rects(&svg);
        assert_eq!(rects.len(), 1);
        assert!(rects[0].contains("x=\"0\" y=\"350\" width=\"40\" height=\"10\""));
        assert_eq!(svg, render_piano_roll(&e, None));
    }

    #[test]
    fn generated_slots_are_green() {
        let notes = [Note::new(3, 0, 4).unwrap(), Note::new(5, 8, 2).unwrap()];
        let e = Excerpt::from_notes(&notes, 2).unwrap();
        let mut g = PriorGrid::from_excerpt(&e);
        g.set(1, SlotPrior::full());
        let svg = render_piano_roll(&e, Some(&g));
        let rects = note_rects(&svg);
        assert!(rects[0].contains(KEPT));
        assert!(rects[1].contains(GENERATED));
    }
}
