//! Inductive network with scripted faults and its linear reduction at the PCC.
//!
//! Buses with a known voltage (ideal sources, generator internal nodes and
//! bolted-fault points) are fixed nodes; the remaining buses are solved from
//! the nodal admittance equations. Every node voltage of interest is affine
//! in the ideal-source voltages, the generator potentials and the converter
//! injection, so one reduction per topology serves every time step.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::core_types::{Phasor, TheveninParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub l_henries: f64,
    /// Reactance in pu.
    pub x: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxDecayGenParams {
    /// d-axis transient open-circuit time constant, s.
    pub t_d0p: f64,
    pub x_d: f64,
    pub x_dp: f64,
    /// Initial transient potential, pu.
    pub e_q0: f64,
    /// Rotor-frame angle of the potential, rad.
    pub angle: f64,
    pub e_fd_max: f64,
    pub avr_gain: f64,
    pub avr_tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    IdealSource { e: Phasor },
    FluxDecayGen(FluxDecayGenParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub bus: usize,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClearingAction {
    OpenBranch,
    RemoveFaultOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultEvent {
    pub t_apply: f64,
    pub t_clear: f64,
    pub branch: usize,
    /// Fraction of the branch from its `from` bus.
    pub position: f64,
    pub clearing: ClearingAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<String>,
    pub branches: Vec<Branch>,
    pub sources: Vec<Source>,
    pub pcc: usize,
    pub faults: Vec<FaultEvent>,
}

/// Branch status and active bolted faults `(branch, position)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub in_service: Vec<bool>,
    pub faults: Vec<(usize, f64)>,
}

impl Network {
    pub fn base_topology(&self) -> Topology {
        Topology {
            in_service: self.branches.iter().map(|b| b.in_service).collect(),
            faults: Vec::new(),
        }
    }

    /// Topology in force at `t`: events at `t_apply`/`t_clear` exactly have
    /// already taken effect.
    pub fn topology_at(&self, t: f64) -> Topology {
        let mut topo = self.base_topology();
        for f in &self.faults {
            if t >= f.t_clear {
                if f.clearing == ClearingAction::OpenBranch {
                    topo.in_service[f.branch] = false;
                }
            } else if t >= f.t_apply {
                topo.faults.push((f.branch, f.position));
            }
        }
        topo
    }

    pub fn generators(&self) -> impl Iterator<Item = (usize, &FluxDecayGenParams)> {
        self.sources.iter().enumerate().filter_map(|(k, s)| match &s.kind {
            SourceKind::FluxDecayGen(p) => Some((k, p)),
            _ => None,
        })
    }

    /// Indices of generator sources in source order.
    pub fn generator_indices(&self) -> Vec<usize> {
        self.generators().map(|(k, _)| k).collect()
    }

    pub fn reduce(&self, topo: &Topology) -> Result<Reduction, SimError> {
        Reduction::build(self, topo)
    }
}

/// `c0 + Σ c_gen[k]·E_k + c_inj·I` for one complex quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub c0: Complex64,
    pub c_gen: Vec<Complex64>,
    pub c_inj: Complex64,
}

impl Affine {
    pub fn eval(&self, gen_e: &[Complex64], inj: Complex64) -> Complex64 {
        let mut v = self.c0 + self.c_inj * inj;
        for (c, e) in self.c_gen.iter().zip(gen_e) {
            v += c * e;
        }
        v
    }
}

/// Affine maps for the PCC voltage and each generator's terminal voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub pcc: Affine,
    /// Terminal-bus voltage per generator, in generator order.
    pub gen_terminal: Vec<Affine>,
}

impl Reduction {
    /// Thevenin equivalent at the PCC for the given generator potentials.
    pub fn thevenin(&self, gen_e: &[Complex64]) -> TheveninParams {
        let e = self.pcc.eval(gen_e, Complex64::new(0.0, 0.0));
        TheveninParams::new(e.into(), self.pcc.c_inj.re, self.pcc.c_inj.im)
    }

    fn build(net: &Network, topo: &Topology) -> Result<Self, SimError> {
        let nb = net.buses.len();
        let gens: Vec<(usize, FluxDecayGenParams)> = net
            .sources
            .iter()
            .filter_map(|s| match s.kind {
                SourceKind::FluxDecayGen(p) => Some((s.bus, p)),
                _ => None,
            })
            .collect();

        // Node layout: buses, then one internal node per generator, then
        // one node per fault point, then ground.
        let n_gen = gens.len();
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        let ground = nb + n_gen + topo.faults.len();
        let n_nodes = ground + 1;
        for (k, (bus, p)) in gens.iter().enumerate() {
            edges.push((nb + k, *bus, p.x_dp));
        }
        for (bi, b) in net.branches.iter().enumerate() {
            if !topo.in_service[bi] {
                continue;
            }
            let faults: Vec<(usize, f64)> = topo
                .faults
                .iter()
                .enumerate()
                .filter(|(_, (fb, _))| *fb == bi)
                .map(|(k, (_, pos))| (k, *pos))
                .collect();
            match faults.first() {
                None => edges.push((b.from, b.to, b.x)),
                Some(&(k, pos)) => {
                    let node = nb + n_gen + k;
                    // A fault at a branch end grounds that bus through a
                    // vanishing segment, represented by an exact tie.
                    if pos > 0.0 {
                        edges.push((b.from, node, b.x * pos));
                    } else {
                        edges.push((b.from, ground, 0.0));
                    }
                    if pos < 1.0 {
                        edges.push((node, b.to, b.x * (1.0 - pos)));
                    } else {
                        edges.push((b.to, ground, 0.0));
                    }
                }
            }
        }
        for k in 0..topo.faults.len() {
            edges.push((nb + n_gen + k, ground, 0.0));
        }

        // Merge zero-reactance ties into equivalence classes.
        let mut parent: Vec<usize> = (0..n_nodes).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(a, b, x) in &edges {
            if x == 0.0 {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let rep: Vec<usize> = (0..n_nodes).map(|i| find(&mut parent, i)).collect();

        // Fixed nodes and their value index: None = ground, Some(src) for
        // ideal sources, generator internal nodes handled separately.
        #[derive(Clone, Copy, PartialEq)]
        enum Fixed {
            Ground,
            Ideal(Complex64),
            Gen(usize),
        }
        let mut fixed: Vec<Option<Fixed>> = vec![None; n_nodes];
        let mut set_fixed = |node: usize, f: Fixed| -> Result<(), SimError> {
            match fixed[node] {
                Some(old) if old != f => Err(SimError::InvalidNetwork(
                    "two different fixed voltages are tied together".into(),
                )),
                _ => {
                    fixed[node] = Some(f);
                    Ok(())
                }
            }
        };
        set_fixed(rep[ground], Fixed::Ground)?;
        for s in &net.sources {
            if let SourceKind::IdealSource { e } = s.kind {
                set_fixed(rep[s.bus], Fixed::Ideal(e.into()))?;
            }
        }
        for k in 0..n_gen {
            set_fixed(rep[nb + k], Fixed::Gen(k))?;
        }

        // Adjacency over representative nodes.
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for &(a, b, x) in &edges {
            let (ra, rb) = (rep[a], rep[b]);
            if x > 0.0 && ra != rb {
                adj[ra].push((rb, x));
                adj[rb].push((ra, x));
            }
        }

        // Components; unknowns are free nodes in components holding a fixed node.
        let mut comp = vec![usize::MAX; n_nodes];
        let mut comp_fixed: Vec<bool> = Vec::new();
        for start in 0..n_nodes {
            if rep[start] != start || comp[start] != usize::MAX {
                continue;
            }
            let id = comp_fixed.len();
            let mut has_fixed = false;
            let mut q = VecDeque::from([start]);
            comp[start] = id;
            while let Some(n) = q.pop_front() {
                has_fixed |= fixed[n].is_some();
                for &(m, _) in &adj[n] {
                    if comp[m] == usize::MAX {
                        comp[m] = id;
                        q.push_back(m);
                    }
                }
            }
            comp_fixed.push(has_fixed);
        }
        let pcc = rep[net.pcc];
        if !comp_fixed[comp[pcc]] {
            return Err(SimError::DisconnectedPcc);
        }
        let unknown: Vec<usize> = (0..n_nodes)
            .filter(|&n| rep[n] == n && fixed[n].is_none() && comp_fixed[comp[n]])
            .collect();
        let mut uidx = vec![usize::MAX; n_nodes];
        for (k, &n) in unknown.iter().enumerate() {
            uidx[n] = k;
        }

        let nu = unknown.len();
        let mut y = DMatrix::<Complex64>::zeros(nu, nu);
        // Right-hand sides: column 0 ideal sources, 1..=n_gen generators,
        // last column unit injection at the PCC.
        let ncols = n_gen + 2;
        let mut rhs = DMatrix::<Complex64>::zeros(nu, ncols);
        for &n in &unknown {
            let i = uidx[n];
            for &(m, x) in &adj[n] {
                let yb = Complex64::new(0.0, -1.0 / x);
                y[(i, i)] += yb;
                match fixed[m] {
                    None => y[(i, uidx[m])] -= yb,
                    Some(Fixed::Ground) => {}
                    Some(Fixed::Ideal(e)) => rhs[(i, 0)] += yb * e,
                    Some(Fixed::Gen(k)) => rhs[(i, 1 + k)] += yb,
                }
            }
        }
        if fixed[pcc].is_none() {
            rhs[(uidx[pcc], ncols - 1)] += Complex64::new(1.0, 0.0);
        }
        let sol = if nu > 0 {
            y.lu()
                .solve(&rhs)
                .ok_or_else(|| SimError::InvalidNetwork("singular nodal admittance matrix".into()))?
        } else {
            DMatrix::zeros(0, ncols)
        };

        let affine_of = |node: usize| -> Affine {
            let r = rep[node];
            match fixed[r] {
                Some(Fixed::Ground) => Affine {
                    c0: Complex64::new(0.0, 0.0),
                    c_gen: vec![Complex64::new(0.0, 0.0); n_gen],
                    c_inj: Complex64::new(0.0, 0.0),
                },
                Some(Fixed::Ideal(e)) => Affine {
                    c0: e,
                    c_gen: vec![Complex64::new(0.0, 0.0); n_gen],
                    c_inj: Complex64::new(0.0, 0.0),
                },
                Some(Fixed::Gen(k)) => {
                    let mut c_gen = vec![Complex64::new(0.0, 0.0); n_gen];
                    c_gen[k] = Complex64::new(1.0, 0.0);
                    Affine {
                        c0: Complex64::new(0.0, 0.0),
                        c_gen,
                        c_inj: Complex64::new(0.0, 0.0),
                    }
                }
                None if comp_fixed[comp[r]] => {
                    let row = sol.row(uidx[r]);
                    Affine {
                        c0: row[0],
                        c_gen: (0..n_gen).map(|k| row[1 + k]).collect(),
                        c_inj: row[ncols - 1],
                    }
                }
                None => Affine {
                    c0: Complex64::new(0.0, 0.0),
                    c_gen: vec![Complex64::new(0.0, 0.0); n_gen],
                    c_inj: Complex64::new(0.0, 0.0),
                },
            }
        };
        Ok(Self {
            pcc: affine_of(net.pcc),
            gen_terminal: gens.iter().map(|(bus, _)| affine_of(*bus)).collect(),
        })
    }
}

/// Thevenin equivalent at the PCC at `at_time` with the initial generator
/// potentials.
pub fn thevenin_reduce(net: &Network, at_time: f64) -> Result<TheveninParams, SimError> {
    let red = net.reduce(&net.topology_at(at_time))?;
    Ok(red.thevenin(&initial_gen_potentials(net)))
}

pub fn initial_gen_potentials(net: &Network) -> Vec<Complex64> {
    net.generators()
        .map(|(_, p)| Complex64::from_polar(p.e_q0, p.angle))
        .collect()
}

/// Largest PCC reactance over the intact network and every single-branch
/// outage that leaves the PCC connected.
pub fn max_outage_reactance(net: &Network) -> Result<f64, SimError> {
    let gen_e = initial_gen_potentials(net);
    let base = net.base_topology();
    let mut x_max = net.reduce(&base)?.thevenin(&gen_e).x;
    for k in 0..net.branches.len() {
        if !base.in_service[k] {
            continue;
        }
        let mut topo = base.clone();
        topo.in_service[k] = false;
        match net.reduce(&topo) {
            Ok(r) => x_max = x_max.max(r.thevenin(&gen_e).x),
            Err(SimError::DisconnectedPcc) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(x_max)
}
