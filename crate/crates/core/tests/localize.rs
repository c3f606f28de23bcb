use retrieval_ocr::localize::localize_chars;
use retrieval_ocr::rng::derive;
use retrieval_ocr::synth::{compose_line, random_text, FontSource, LineSpec, BUILTIN_FONTS};
use retrieval_ocr::{iou, TextDirection};

#[test]
fn clean_lines_recover_ground_truth_boxes() {
    let fonts: Vec<FontSource> = BUILTIN_FONTS.iter().map(|n| FontSource::builtin(n).unwrap()).collect();
    let alphabet: Vec<char> = ('0'..='9').chain('a'..='z').collect();
    let (mut exact, mut iou_sum, mut matched) = (0usize, 0.0f64, 0usize);
    let mut misses = Vec::new();
    for i in 0..500u64 {
        let text = random_text(&alphabet, 1..=5, 1..=8, derive(11, &[i]));
        let font = &fonts[i as usize % fonts.len()];
        let line = compose_line(&LineSpec::new(text.clone(), font.id()), &fonts, derive(12, &[i])).unwrap();
        let boxes = localize_chars(&line.image, TextDirection::HorizontalLtr);
        for b in &boxes {
            assert!(b.fits_within(line.image.width(), line.image.height()));
        }
        if boxes.len() == line.char_boxes.len() {
            exact += 1;
        } else {
            misses.push(format!("{}: {text:?} {} vs {}", font.id(), boxes.len(), line.char_boxes.len()));
        }
        for gt in &line.char_boxes {
            iou_sum += boxes.iter().map(|b| iou(b, gt)).fold(0.0, f64::max);
            matched += 1;
        }
    }
    let mean_iou = iou_sum / matched as f64;
    println!("exact count {exact}/500, mean IoU {mean_iou:.4}");
    assert!(mean_iou >= 0.7, "mean IoU {mean_iou}");
    assert!(exact >= 490, "exact count on {exact}/500 lines; misses: {misses:?}");
}
