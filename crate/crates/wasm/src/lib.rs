//! Browser bindings: grow an aggregate step by step, trace the staged
//! construction, and show the exact exit law of a ball.

use wasm_bindgen::prelude::*;

use idla_core::idla::{add_batch, release};
use idla_core::raster::{pixel_sites, render};
use idla_core::walk::DEFAULT_STEP_CAP;
use idla_core::{
    exact_walk_law, generate, staged_construction, Aggregate, Environment, PauseRegion,
    ReplicaStreams, RootSeed, SortedSites,
};

fn js(e: idla_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A two-dimensional environment with one growing aggregate.
#[wasm_bindgen]
pub struct Lab {
    env: Environment,
    aggregate: Aggregate,
    streams: ReplicaStreams,
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new(extent: i32, p: f64, seed: u32) -> Result<Lab, JsError> {
        let env = generate(2, extent, p, u64::from(seed)).map_err(js)?;
        let aggregate = Aggregate::new(&env, env.origin());
        Ok(Lab {
            aggregate,
            streams: RootSeed(u64::from(seed)).replica(0),
            env,
        })
    }

    pub fn side(&self) -> usize {
        self.env.side()
    }

    #[wasm_bindgen(js_name = clusterSize)]
    pub fn cluster_size(&self) -> usize {
        self.env.cluster_size()
    }

    #[wasm_bindgen(js_name = aggregateSize)]
    pub fn aggregate_size(&self) -> usize {
        self.aggregate.len()
    }

    pub fn outradius(&self) -> f64 {
        self.aggregate.outradius(&self.env)
    }

    /// Release `count` more particles from the origin.
    pub fn grow(&mut self, count: usize) -> Result<(), JsError> {
        let room = self.env.cluster_size() - self.aggregate.len();
        let o = self.env.origin();
        let batch = release(&mut self.streams, count.min(room))
            .into_iter()
            .map(|p| (o, p))
            .collect();
        add_batch(&self.env, &mut self.aggregate, batch, &PauseRegion::Everywhere, DEFAULT_STEP_CAP)
            .map_err(js)?;
        Ok(())
    }

    /// RGBA pixels: aggregate red, cluster green, off-cluster blue.
    pub fn pixels(&self) -> Vec<u8> {
        rgba(&render(&self.env, Some(&self.aggregate)).data)
    }

    /// Staged construction at scale `n`, flattened as `(j, n_j, k_j)` triples.
    pub fn staged(&self, n: f64, seed: u32) -> Result<Vec<f64>, JsError> {
        let mut streams = RootSeed(u64::from(seed)).replica(0);
        let (_, trace) = staged_construction(&self.env, n, &mut streams).map_err(js)?;
        Ok(trace
            .stages
            .iter()
            .flat_map(|s| [s.j as f64, s.radius, s.paused as f64])
            .collect())
    }

    /// RGBA heat map of where a walk from the origin first leaves the
    /// cluster ball of `radius`; brighter means likelier.
    #[wasm_bindgen(js_name = exitLaw)]
    pub fn exit_law(&self, radius: f64) -> Result<Vec<u8>, JsError> {
        let o = self.env.origin();
        let set = SortedSites::new(self.env.ball_sites(o, radius));
        let law = exact_walk_law(&self.env, o, &set, &PauseRegion::Everywhere).map_err(js)?;
        let peak = law.absorbed.values().copied().fold(0.0, f64::max);
        let (_, _, sites) = pixel_sites(&self.env);
        let mut out = Vec::with_capacity(4 * sites.len());
        for s in sites {
            let px = if let Some(&q) = law.absorbed.get(&s) {
                let v = (255.0 * (q / peak).sqrt()) as u8;
                [255, v, 0, 255]
            } else if set.0.binary_search(&s).is_ok() {
                [60, 60, 90, 255]
            } else if self.env.in_cluster(s) {
                [20, 40, 20, 255]
            } else {
                [0, 0, 0, 255]
            };
            out.extend_from_slice(&px);
        }
        Ok(out)
    }
}

fn rgba(rgb: &[u8]) -> Vec<u8> {
    rgb.chunks_exact(3)
        .flat_map(|c| [c[0], c[1], c[2], 255])
        .collect()
}
