//! Chunked sampling under an iteration wavefront.
//!
//! The image is tiled into chunks. A chunk may run sweep `t` once all eight
//! surrounding chunks have finished sweep `t - 1`; neighbouring chunks are
//! therefore never more than one sweep apart and the frontier of finished
//! sweeps moves diagonally across the grid.
//!
//! Every finished sweep is published as an iteration-tagged snapshot of the
//! chunk interior. Before sweep `t` a chunk reads its halos from the
//! neighbours' snapshots tagged `t - 1` and rebuilds its copy of the global
//! spectrum from every other chunk's snapshot tagged `t - d`, `d` being the
//! chunk distance. What a chunk reads is thus fixed by the layout alone, and
//! results do not depend on the number of workers or on thread timing.

use std::sync::{Condvar, Mutex};

use ndarray::{s, Array2, Ix2, SliceInfo, SliceInfoElem};

use crate::camera::CameraMap;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::inference::{
    Accumulator, ChainDiagnostics, ChunkSampler, Model, PosteriorSummary, SamplerConfig,
};
use crate::optics::Psf;
use crate::rng::{self, domain};

/// Half-open pixel rectangle `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    pub fn new(r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        debug_assert!(r0 <= r1 && c0 <= c1);
        Self { r0, r1, c0, c1 }
    }

    pub fn full(shape: (usize, usize)) -> Self {
        Self::new(0, shape.0, 0, shape.1)
    }

    pub fn rows(&self) -> usize {
        self.r1 - self.r0
    }

    pub fn cols(&self) -> usize {
        self.c1 - self.c0
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }

    /// Grown by `margin` on every side, clipped to `shape`.
    pub fn grow(&self, margin: usize, shape: (usize, usize)) -> Self {
        Self::new(
            self.r0.saturating_sub(margin),
            (self.r1 + margin).min(shape.0),
            self.c0.saturating_sub(margin),
            (self.c1 + margin).min(shape.1),
        )
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.r0.max(other.r0),
            self.r1.min(other.r1).max(self.r0.max(other.r0)),
            self.c0.max(other.c0),
            self.c1.min(other.c1).max(self.c0.max(other.c0)),
        );
        if r.is_empty() {
            None
        } else {
            Some(r)
        }
    }

    /// Coordinates relative to the top-left corner of `outer`.
    pub fn relative_to(&self, outer: &Rect) -> Rect {
        Rect::new(
            self.r0 - outer.r0,
            self.r1 - outer.r0,
            self.c0 - outer.c0,
            self.c1 - outer.c0,
        )
    }

    pub fn slice(&self) -> SliceInfo<[SliceInfoElem; 2], Ix2, Ix2> {
        s![self.r0..self.r1, self.c0..self.c1]
    }
}

/// One tile of the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkDescriptor {
    pub id: usize,
    /// Position in the chunk grid.
    pub grid_pos: (usize, usize),
    pub interior: Rect,
    /// Edge-sharing neighbours.
    pub neighbors: Vec<usize>,
    /// Edge- and corner-sharing neighbours; the wavefront dependencies.
    pub moore: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkLayout {
    pub image_shape: (usize, usize),
    pub chunk_side: usize,
    /// Halo width in pixels, the PSF half support.
    pub halo: usize,
    pub grid: (usize, usize),
    pub chunks: Vec<ChunkDescriptor>,
}

impl ChunkLayout {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Chebyshev distance between two chunks in the chunk grid.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let (ar, ac) = self.chunks[a].grid_pos;
        let (br, bc) = self.chunks[b].grid_pos;
        ar.abs_diff(br).max(ac.abs_diff(bc))
    }

    pub fn max_distance(&self) -> usize {
        (self.grid.0.max(self.grid.1)).saturating_sub(1)
    }

    /// Chunk owning pixel `(r, c)`.
    pub fn owner(&self, r: usize, c: usize) -> usize {
        let i = r / self.chunk_side;
        let j = c / self.chunk_side;
        i * self.grid.1 + j
    }
}

/// Ceil-division tiling with square interiors of `chunk_side`; the last
/// row and column of chunks take the remainder.
pub fn build_layout(
    image_shape: (usize, usize),
    psf: &Psf,
    chunk_side: usize,
) -> Result<ChunkLayout> {
    layout_with_halo(image_shape, psf.half_support(), chunk_side)
}

pub fn layout_with_halo(
    image_shape: (usize, usize),
    halo: usize,
    chunk_side: usize,
) -> Result<ChunkLayout> {
    if image_shape.0 == 0 || image_shape.1 == 0 {
        return Err(Error::invalid("image must be non-empty"));
    }
    if chunk_side < 2 * halo + 1 {
        return Err(Error::invalid(format!(
            "chunk side {chunk_side} is below 2 * halo + 1 = {}",
            2 * halo + 1
        )));
    }
    let grid = (
        image_shape.0.div_ceil(chunk_side),
        image_shape.1.div_ceil(chunk_side),
    );
    let mut chunks = Vec::with_capacity(grid.0 * grid.1);
    for i in 0..grid.0 {
        for j in 0..grid.1 {
            let interior = Rect::new(
                i * chunk_side,
                ((i + 1) * chunk_side).min(image_shape.0),
                j * chunk_side,
                ((j + 1) * chunk_side).min(image_shape.1),
            );
            let mut neighbors = Vec::new();
            let mut moore = Vec::new();
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= grid.0 as isize || nj >= grid.1 as isize {
                        continue;
                    }
                    let id = ni as usize * grid.1 + nj as usize;
                    moore.push(id);
                    if di == 0 || dj == 0 {
                        neighbors.push(id);
                    }
                }
            }
            chunks.push(ChunkDescriptor {
                id: i * grid.1 + j,
                grid_pos: (i, j),
                interior,
                neighbors,
                moore,
            });
        }
    }
    Ok(ChunkLayout {
        image_shape,
        chunk_side,
        halo,
        grid,
        chunks,
    })
}

/// The whole image as one chunk.
pub fn single_chunk_layout(image_shape: (usize, usize), halo: usize) -> ChunkLayout {
    let side = image_shape.0.max(image_shape.1).max(2 * halo + 1);
    layout_with_halo(image_shape, halo, side).expect("single-chunk layout is always valid")
}

/// A chunk interior after a given sweep (0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tag: usize,
    pub rho: Array2<f64>,
    pub phi: Array2<f64>,
}

/// Recent snapshots of one chunk, indexed by tag modulo the depth.
#[derive(Debug, Clone)]
pub struct SnapshotRing {
    slots: Vec<Option<Snapshot>>,
}

impl SnapshotRing {
    pub fn new(depth: usize) -> Self {
        Self {
            slots: vec![None; depth.max(1)],
        }
    }

    pub fn publish(&mut self, snapshot: Snapshot) {
        let slot = snapshot.tag % self.slots.len();
        self.slots[slot] = Some(snapshot);
    }

    /// The snapshot with exactly this tag; anything else is a scheduling
    /// fault.
    pub fn read(&self, tag: usize) -> Result<&Snapshot> {
        match &self.slots[tag % self.slots.len()] {
            Some(s) if s.tag == tag => Ok(s),
            Some(s) => Err(Error::Schedule(format!(
                "wanted snapshot for sweep {tag}, slot holds sweep {}",
                s.tag
            ))),
            None => Err(Error::Schedule(format!("no snapshot for sweep {tag}"))),
        }
    }
}

/// Ring depth sufficient for a layout: a chunk at distance `d` can be up to
/// `d` sweeps ahead of a reader that needs its snapshot from `d` sweeps back.
pub fn ring_depth(layout: &ChunkLayout) -> usize {
    2 * layout.max_distance() + 2
}

/// Published snapshots of every chunk.
#[derive(Debug)]
pub struct Board {
    rings: Vec<Mutex<SnapshotRing>>,
}

impl Board {
    pub fn new(layout: &ChunkLayout) -> Self {
        let depth = ring_depth(layout);
        Self {
            rings: (0..layout.len())
                .map(|_| Mutex::new(SnapshotRing::new(depth)))
                .collect(),
        }
    }

    pub fn publish(&self, chunk: usize, snapshot: Snapshot) {
        self.rings[chunk]
            .lock()
            .expect("snapshot ring poisoned")
            .publish(snapshot);
    }

    pub fn read<T>(&self, chunk: usize, tag: usize, f: impl FnOnce(&Snapshot) -> T) -> Result<T> {
        let ring = self.rings[chunk].lock().expect("snapshot ring poisoned");
        ring.read(tag).map(f)
    }
}

/// Halo content received from one neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloStrip {
    pub source: usize,
    pub tag: usize,
    /// Part of the source interior inside the receiver's window.
    pub rect: Rect,
    pub rho: Array2<f64>,
    pub phi: Array2<f64>,
}

/// Halo strips chunk `chunk_id` needs before sweep `iteration`: the parts of
/// the neighbours' interiors, as published after sweep `iteration - 1`, that
/// fall inside its window.
pub fn exchange_halos(
    layout: &ChunkLayout,
    board: &Board,
    chunk_id: usize,
    iteration: usize,
) -> Result<Vec<HaloStrip>> {
    if iteration == 0 {
        return Err(Error::Schedule("sweeps are numbered from 1".into()));
    }
    let tag = iteration - 1;
    let chunk = &layout.chunks[chunk_id];
    let window = chunk.interior.grow(2 * layout.halo, layout.image_shape);
    let mut strips = Vec::new();
    for &n in &chunk.moore {
        let source = layout.chunks[n].interior;
        let Some(rect) = source.intersect(&window) else {
            continue;
        };
        let local = rect.relative_to(&source);
        let strip = board.read(n, tag, |snap| HaloStrip {
            source: n,
            tag,
            rect,
            rho: snap.rho.slice(local.slice()).to_owned(),
            phi: snap.phi.slice(local.slice()).to_owned(),
        })?;
        strips.push(strip);
    }
    Ok(strips)
}

/// Per-chunk completed-sweep counters and the wavefront dependency rule.
#[derive(Debug, Clone)]
pub struct WavefrontSchedule {
    completed: Vec<usize>,
    running: Vec<bool>,
    moore: Vec<Vec<usize>>,
    total: usize,
}

impl WavefrontSchedule {
    pub fn new(layout: &ChunkLayout, total_sweeps: usize) -> Self {
        Self {
            completed: vec![0; layout.len()],
            running: vec![false; layout.len()],
            moore: layout.chunks.iter().map(|c| c.moore.clone()).collect(),
            total: total_sweeps,
        }
    }

    pub fn completed(&self) -> &[usize] {
        &self.completed
    }

    pub fn is_done(&self) -> bool {
        self.completed.iter().all(|&c| c >= self.total)
    }

    pub fn any_running(&self) -> bool {
        self.running.iter().any(|&r| r)
    }

    /// Chunk `c` may start its next sweep.
    pub fn is_runnable(&self, c: usize) -> bool {
        let next = self.completed[c] + 1;
        !self.running[c]
            && next <= self.total
            && self.moore[c].iter().all(|&n| self.completed[n] + 1 >= next)
    }

    /// Runnable chunk with the lowest (next sweep, id).
    pub fn next_runnable(&self) -> Option<usize> {
        (0..self.completed.len())
            .filter(|&c| self.is_runnable(c))
            .min_by_key(|&c| (self.completed[c], c))
    }

    /// Mark chunk `c` as running and return the sweep it performs.
    pub fn start(&mut self, c: usize) -> Result<usize> {
        if !self.is_runnable(c) {
            return Err(Error::Schedule(format!(
                "chunk {c} started out of order\n{}",
                self.dump()
            )));
        }
        self.running[c] = true;
        Ok(self.completed[c] + 1)
    }

    /// Record that `c` finished its sweep. Returns the sweep index when this
    /// completes it for every chunk.
    pub fn finish(&mut self, c: usize) -> Option<usize> {
        debug_assert!(self.running[c]);
        self.running[c] = false;
        self.completed[c] += 1;
        let t = self.completed[c];
        let min = self.completed.iter().copied().min().unwrap_or(0);
        if min == t {
            Some(t)
        } else {
            None
        }
    }

    /// Largest counter difference between adjacent chunks.
    pub fn max_neighbor_gap(&self) -> usize {
        let mut gap = 0;
        for (c, ns) in self.moore.iter().enumerate() {
            for &n in ns {
                gap = gap.max(self.completed[c].abs_diff(self.completed[n]));
            }
        }
        gap
    }

    pub fn dump(&self) -> String {
        let mut out = String::from("chunk completed running\n");
        for (c, (&done, &run)) in self.completed.iter().zip(&self.running).enumerate() {
            out.push_str(&format!("{c:5} {done:9} {run}\n"));
        }
        out
    }
}

struct SchedState {
    schedule: WavefrontSchedule,
    acc: Accumulator,
    error: Option<Error>,
}

struct Shared<'a> {
    model: &'a Model,
    config: &'a SamplerConfig,
    layout: &'a ChunkLayout,
    chunks: Vec<Mutex<ChunkSampler>>,
    board: Board,
    state: Mutex<SchedState>,
    wake: Condvar,
    flat: bool,
}

/// Chunked run with the layout implied by `config.chunk_side`.
pub fn run_wavefront(
    raw: &ImageGrid,
    psf: &Psf,
    camera: &CameraMap,
    config: &SamplerConfig,
    n_workers: usize,
) -> Result<PosteriorSummary> {
    let model = Model::new(raw.clone(), psf.clone(), camera.clone())?;
    run_model_wavefront(&model, config, n_workers)
}

pub fn run_model_wavefront(
    model: &Model,
    config: &SamplerConfig,
    n_workers: usize,
) -> Result<PosteriorSummary> {
    let h = model.half_support();
    config.validate(h)?;
    let layout = layout_with_halo(model.shape(), h, config.effective_chunk_side(h))?;
    run_layout(model, config, &layout, n_workers)
}

/// Run the sampler over an explicit layout with `n_workers` threads.
pub fn run_layout(
    model: &Model,
    config: &SamplerConfig,
    layout: &ChunkLayout,
    n_workers: usize,
) -> Result<PosteriorSummary> {
    if n_workers == 0 {
        return Err(Error::invalid("at least one worker is required"));
    }
    config.validate(model.half_support())?;
    if layout.image_shape != model.shape() || layout.halo != model.half_support() {
        return Err(Error::invalid("layout does not match the model"));
    }
    let rho0 = model.initial_object()?;
    let phi0 = model.initial_photons();
    let board = Board::new(layout);
    let mut chunks = Vec::with_capacity(layout.len());
    for chunk in &layout.chunks {
        let rng = rng::stream(config.seed, domain::CHUNK + chunk.id as u64);
        let sampler = ChunkSampler::new(model, chunk.interior, rho0.view(), phi0.view(), rng);
        board.publish(
            chunk.id,
            Snapshot {
                tag: 0,
                rho: sampler.interior_object(),
                phi: sampler.interior_photons(),
            },
        );
        chunks.push(Mutex::new(sampler));
    }
    let shared = Shared {
        model,
        config,
        layout,
        chunks,
        board,
        state: Mutex::new(SchedState {
            schedule: WavefrontSchedule::new(layout, config.total_sweeps()),
            acc: Accumulator::new(model.shape(), config.keep_samples),
            error: None,
        }),
        wake: Condvar::new(),
        flat: model.prior().is_flat(),
    };

    let workers = n_workers.min(layout.len());
    if workers == 1 {
        worker(&shared);
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| worker(&shared));
            }
        });
    }

    let state = shared.state.into_inner().expect("scheduler poisoned");
    if let Some(e) = state.error {
        return Err(e);
    }
    let mut diagnostics = ChainDiagnostics {
        sweeps: config.total_sweeps(),
        ..ChainDiagnostics::default()
    };
    for chunk in shared.chunks {
        diagnostics.merge(&chunk.into_inner().expect("chunk poisoned").stats);
    }
    state.acc.finish(model.raw().pixel_pitch(), diagnostics)
}

fn worker(shared: &Shared<'_>) {
    loop {
        let (c, t) = {
            let mut st = shared.state.lock().expect("scheduler poisoned");
            loop {
                if st.error.is_some() || st.schedule.is_done() {
                    return;
                }
                if let Some(c) = st.schedule.next_runnable() {
                    match st.schedule.start(c) {
                        Ok(t) => break (c, t),
                        Err(e) => {
                            st.error = Some(e);
                            shared.wake.notify_all();
                            return;
                        }
                    }
                }
                if !st.schedule.any_running() {
                    let dump = st.schedule.dump();
                    st.error = Some(Error::Schedule(format!("no chunk can run\n{dump}")));
                    shared.wake.notify_all();
                    return;
                }
                st = shared.wake.wait(st).expect("scheduler poisoned");
            }
        };
        let outcome = run_chunk_sweep(shared, c, t);
        let mut st = shared.state.lock().expect("scheduler poisoned");
        if let Err(e) = outcome {
            st.error.get_or_insert(e);
            shared.wake.notify_all();
            return;
        }
        if let Some(done) = st.schedule.finish(c) {
            if shared.config.is_sample_sweep(done) {
                match assemble(shared, done) {
                    Ok(sample) => st.acc.add(sample),
                    Err(e) => {
                        st.error.get_or_insert(e);
                    }
                }
            }
        }
        shared.wake.notify_all();
    }
}

fn run_chunk_sweep(shared: &Shared<'_>, c: usize, t: usize) -> Result<()> {
    let layout = shared.layout;
    let mut chunk = shared.chunks[c].lock().expect("chunk poisoned");
    for strip in exchange_halos(layout, &shared.board, c, t)? {
        if strip.tag + 1 != t {
            return Err(Error::Schedule(format!(
                "chunk {c} at sweep {t} received halo from sweep {}",
                strip.tag
            )));
        }
        chunk.load_foreign(strip.rect, strip.rho.view(), strip.phi.view(), true);
    }
    if !shared.flat {
        for other in &layout.chunks {
            if other.id == c {
                continue;
            }
            let tag = t.saturating_sub(layout.distance(c, other.id));
            shared.board.read(other.id, tag, |snap| {
                chunk.load_foreign(other.interior, snap.rho.view(), snap.phi.view(), false)
            })?;
        }
    }
    chunk.sweep(shared.config.proposal_sd, shared.config.refresh_interval);
    let snapshot = Snapshot {
        tag: t,
        rho: chunk.interior_object(),
        phi: chunk.interior_photons(),
    };
    drop(chunk);
    shared.board.publish(c, snapshot);
    Ok(())
}

/// Whole-image object after sweep `t`, from every chunk's snapshot.
fn assemble(shared: &Shared<'_>, t: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(shared.model.shape());
    for chunk in &shared.layout.chunks {
        shared.board.read(chunk.id, t, |snap| {
            out.slice_mut(chunk.interior.slice()).assign(&snap.rho);
        })?;
    }
    Ok(out)
}
