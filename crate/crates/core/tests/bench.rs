use std::cell::RefCell;
use std::rc::Rc;

use cmudrn::bench::{
    heatmap_csv, heatmap_svg, monotonicity_violations, parse_heatmap_csv, run_grid, BenchGrid,
    Clock, FakeClock, MonotonicClock,
};
use cmudrn::nets::{init_params, CmudrnParams};

fn tiny_model(t: usize) -> CmudrnParams {
    init_params(1, 2, t)
}

fn grid(sizes: Vec<usize>, loops: Vec<usize>, samples: usize, warmup: usize) -> BenchGrid {
    BenchGrid {
        sizes,
        loop_counts: loops,
        samples_per_cell: samples,
        warmup,
    }
}

#[test]
fn one_cell_times_exactly_the_requested_passes() {
    let mut clock = FakeClock::new(0.25);
    let cells = run_grid(&tiny_model, &grid(vec![8], vec![1], 3, 2), 0, &mut clock).unwrap();
    // Two reads per timed pass, none for warmup.
    assert_eq!(clock.reads, 6);
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0].mean_seconds, 0.25);
    assert_eq!(cells[0].stddev_seconds, 0.0);
    assert_eq!(cells[0].fps, 4.0);
}

struct Recorder(Rc<RefCell<Vec<&'static str>>>);

impl Clock for Recorder {
    fn now(&mut self) -> f64 {
        self.0.borrow_mut().push("read");
        self.0.borrow().len() as f64
    }
}

#[test]
fn model_construction_happens_outside_timed_region() {
    let events = Rc::new(RefCell::new(Vec::new()));
    let log = events.clone();
    let factory = move |t: usize| {
        log.borrow_mut().push("build");
        tiny_model(t)
    };
    let mut clock = Recorder(events.clone());
    run_grid(&factory, &grid(vec![8, 12], vec![1, 2], 2, 1), 0, &mut clock).unwrap();
    let ev = events.borrow();
    assert_eq!(ev.iter().filter(|e| **e == "build").count(), 4);
    // Each cell: build, then exactly two read pairs with nothing in between.
    for chunk in ev.chunks(5) {
        assert_eq!(chunk, ["build", "read", "read", "read", "read"]);
    }
}

#[test]
fn failing_cell_is_marked_and_grid_continues() {
    let factory = |t: usize| {
        if t == 2 {
            panic!("no model for T = 2");
        }
        tiny_model(t)
    };
    let mut clock = FakeClock::new(1.0);
    let cells = run_grid(&factory, &grid(vec![8], vec![1, 2, 3], 1, 0), 0, &mut clock).unwrap();
    assert_eq!(cells.len(), 3);
    assert!(cells[0].error.is_none() && cells[2].error.is_none());
    assert!(cells[1].error.as_deref().unwrap().contains("T = 2"));
    assert!(cells[1].mean_seconds.is_nan());
    let back = parse_heatmap_csv(&heatmap_csv(&cells)).unwrap();
    assert!(back[1].error.is_some());
    assert!(heatmap_svg(&cells).contains("#999999"));
}

#[test]
fn csv_rows_are_size_major_and_round_trip() {
    let run = || {
        let mut clock = FakeClock::new(0.5);
        run_grid(&tiny_model, &grid(vec![8, 16], vec![1, 3], 2, 0), 7, &mut clock).unwrap()
    };
    let cells = run();
    let csv = heatmap_csv(&cells);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], "size,T,mean_s,stddev_s,fps");
    let keys: Vec<(usize, usize)> = cells.iter().map(|c| (c.size, c.loops)).collect();
    assert_eq!(keys, vec![(8, 1), (8, 3), (16, 1), (16, 3)]);
    assert_eq!(parse_heatmap_csv(&csv).unwrap(), cells);
    assert_eq!(heatmap_csv(&run()), csv);
}

#[test]
fn real_timings_grow_with_size_and_loops() {
    let mut clock = MonotonicClock::new();
    let cells = run_grid(
        &|t| init_params(1, 4, t),
        &grid(vec![16, 64], vec![1, 4], 3, 1),
        0,
        &mut clock,
    )
    .unwrap();
    let small = &cells[0];
    let large = &cells[3];
    assert_eq!((small.size, small.loops, large.size, large.loops), (16, 1, 64, 4));
    assert!(large.mean_seconds > small.mean_seconds);
    assert!(monotonicity_violations(&cells, 2.0).is_empty(), "{cells:?}");
}
