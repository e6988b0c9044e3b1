//! AC steady-state analysis by modified nodal analysis (MNA).
//!
//! Unknowns are the non-ground node voltages followed by one branch current
//! per voltage source. Every node carries a tiny shunt conductance
//! [`GMIN`] to ground, so floating subcircuits (disconnected components)
//! still give a nonsingular system; their voltages come out as zero.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};

pub type C64 = Complex<f64>;

/// Shunt conductance stamped from every node to ground.
pub const GMIN: f64 = 1e-12;
/// Admittance of an active short circuit.
pub const SHORT_ADMITTANCE: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcError {
    #[error("frequency must be positive and finite, got {0}")]
    Frequency(f64),
    #[error("component `{name}`: {reason}")]
    Component { name: String, reason: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("node `{0}` is not reachable from a source")]
    Unreachable(String),
    #[error("singular MNA system at {0} Hz")]
    Singular(f64),
    #[error("netlist line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    Resistor,
    Capacitor,
    Inductor,
    VacSource,
    Short,
}

impl ComponentKind {
    pub fn code(self) -> &'static str {
        match self {
            ComponentKind::Resistor => "R",
            ComponentKind::Capacitor => "C",
            ComponentKind::Inductor => "L",
            ComponentKind::VacSource => "V",
            ComponentKind::Short => "S",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        Some(match s {
            "R" => ComponentKind::Resistor,
            "C" => ComponentKind::Capacitor,
            "L" => ComponentKind::Inductor,
            "V" => ComponentKind::VacSource,
            "S" => ComponentKind::Short,
            _ => return None,
        })
    }

    pub fn unit(self) -> &'static str {
        match self {
            ComponentKind::Resistor => "Ω",
            ComponentKind::Capacitor => "F",
            ComponentKind::Inductor => "H",
            ComponentKind::VacSource => "V",
            ComponentKind::Short => "",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub kind: ComponentKind,
    pub name: String,
    pub a: usize,
    pub b: usize,
    /// Ω, F, H, or source amplitude in V; ignored for shorts.
    pub value: f64,
    pub connected: bool,
}

impl Component {
    fn admittance(&self, omega: f64) -> Option<C64> {
        if !self.connected {
            return None;
        }
        Some(match self.kind {
            ComponentKind::Resistor => C64::new(1.0 / self.value, 0.0),
            ComponentKind::Capacitor => C64::new(0.0, omega * self.value),
            ComponentKind::Inductor => C64::new(0.0, -1.0 / (omega * self.value)),
            ComponentKind::Short => C64::new(SHORT_ADMITTANCE, 0.0),
            ComponentKind::VacSource => return None,
        })
    }
}

/// Circuit graph. Node 0 is ground.
#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    nodes: Vec<String>,
    node_index: HashMap<String, usize>,
    pub components: Vec<Component>,
}

impl Default for Netlist {
    fn default() -> Self {
        Self::new()
    }
}

fn is_ground(name: &str) -> bool {
    matches!(name, "0" | "gnd" | "GND")
}

impl Netlist {
    pub fn new() -> Self {
        let mut node_index = HashMap::new();
        node_index.insert("0".to_string(), 0);
        Self {
            nodes: vec!["0".to_string()],
            node_index,
            components: Vec::new(),
        }
    }

    /// Index of a node, creating it if needed.
    pub fn node(&mut self, name: &str) -> usize {
        if is_ground(name) {
            return 0;
        }
        if let Some(&i) = self.node_index.get(name) {
            return i;
        }
        self.nodes.push(name.to_string());
        self.node_index
            .insert(name.to_string(), self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    pub fn node_id(&self, name: &str) -> Result<usize, AcError> {
        if is_ground(name) {
            return Ok(0);
        }
        self.node_index
            .get(name)
            .copied()
            .ok_or_else(|| AcError::UnknownNode(name.to_string()))
    }

    pub fn node_name(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn add(
        &mut self,
        kind: ComponentKind,
        name: &str,
        a: &str,
        b: &str,
        value: f64,
    ) -> Result<&mut Self, AcError> {
        if self.components.iter().any(|c| c.name == name) {
            return Err(AcError::Component {
                name: name.to_string(),
                reason: "duplicate name".into(),
            });
        }
        let (a, b) = (self.node(a), self.node(b));
        let c = Component {
            kind,
            name: name.to_string(),
            a,
            b,
            value,
            connected: true,
        };
        check_component(&c)?;
        self.components.push(c);
        Ok(self)
    }

    pub fn component(&self, name: &str) -> Result<&Component, AcError> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| AcError::UnknownComponent(name.to_string()))
    }

    pub fn component_mut(&mut self, name: &str) -> Result<&mut Component, AcError> {
        self.components
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| AcError::UnknownComponent(name.to_string()))
    }

    /// Checks component values and that every node is reachable from a
    /// source through connected components.
    pub fn validate(&self) -> Result<(), AcError> {
        for c in &self.components {
            check_component(c)?;
        }
        let mut reached = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = self
            .components
            .iter()
            .filter(|c| c.kind == ComponentKind::VacSource)
            .flat_map(|c| [c.a, c.b])
            .collect();
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut reached[n], true) {
                continue;
            }
            for c in self.components.iter().filter(|c| c.connected) {
                if c.a == n && !reached[c.b] {
                    stack.push(c.b);
                }
                if c.b == n && !reached[c.a] {
                    stack.push(c.a);
                }
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(AcError::Unreachable(self.nodes[i].clone()));
        }
        Ok(())
    }

    /// One component per line: `kind name node_a node_b value connected`.
    /// `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.components {
            let _ = writeln!(
                s,
                "{} {} {} {} {:?} {}",
                c.kind,
                c.name,
                self.nodes[c.a],
                self.nodes[c.b],
                c.value,
                u8::from(c.connected)
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, AcError> {
        let mut net = Netlist::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| AcError::Parse {
                line: i + 1,
                reason,
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 && f.len() != 6 {
                return Err(err(format!("expected 5 or 6 fields, got {}", f.len())));
            }
            let kind = ComponentKind::from_code(f[0])
                .ok_or_else(|| err(format!("unknown kind `{}`", f[0])))?;
            let value: f64 = f[4]
                .parse()
                .map_err(|_| err(format!("bad value `{}`", f[4])))?;
            let connected = match f.get(5) {
                None | Some(&"1") => true,
                Some(&"0") => false,
                Some(other) => return Err(err(format!("bad connected flag `{other}`"))),
            };
            net.add(kind, f[1], f[2], f[3], value)
                .map_err(|e| err(e.to_string()))?;
            net.components.last_mut().expect("just added").connected = connected;
        }
        Ok(net)
    }
}

fn check_component(c: &Component) -> Result<(), AcError> {
    let bad = |reason: &str| {
        Err(AcError::Component {
            name: c.name.clone(),
            reason: reason.to_string(),
        })
    };
    if c.a == c.b {
        return bad("both terminals on the same node");
    }
    match c.kind {
        ComponentKind::Resistor | ComponentKind::Capacitor | ComponentKind::Inductor => {
            if !(c.value > 0.0 && c.value.is_finite()) {
                return bad("value must be positive and finite");
            }
        }
        ComponentKind::VacSource => {
            if !c.value.is_finite() {
                return bad("amplitude must be finite");
            }
        }
        ComponentKind::Short => {}
    }
    Ok(())
}

/// Node voltages at `freq` Hz, indexed like the netlist's nodes (ground = 0).
pub fn ac_solve(net: &Netlist, freq: f64) -> Result<Vec<C64>, AcError> {
    if !(freq > 0.0 && freq.is_finite()) {
        return Err(AcError::Frequency(freq));
    }
    for c in &net.components {
        check_component(c)?;
    }
    let omega = 2.0 * PI * freq;
    let n = net.num_nodes() - 1;
    let sources: Vec<&Component> = net
        .components
        .iter()
        .filter(|c| c.kind == ComponentKind::VacSource && c.connected)
        .collect();
    let dim = n + sources.len();
    let mut a = DMatrix::<C64>::zeros(dim, dim);
    let mut rhs = DVector::<C64>::zeros(dim);
    for i in 0..n {
        a[(i, i)] += GMIN;
    }
    for c in &net.components {
        let Some(y) = c.admittance(omega) else {
            continue;
        };
        let (ia, ib) = (c.a.checked_sub(1), c.b.checked_sub(1));
        if let Some(i) = ia {
            a[(i, i)] += y;
        }
        if let Some(j) = ib {
            a[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (ia, ib) {
            a[(i, j)] -= y;
            a[(j, i)] -= y;
        }
    }
    for (k, s) in sources.iter().enumerate() {
        let row = n + k;
        if let Some(i) = s.a.checked_sub(1) {
            a[(row, i)] += 1.0;
            a[(i, row)] += 1.0;
        }
        if let Some(j) = s.b.checked_sub(1) {
            a[(row, j)] -= 1.0;
            a[(j, row)] -= 1.0;
        }
        rhs[row] = C64::new(s.value, 0.0);
    }
    let x = a.lu().solve(&rhs).ok_or(AcError::Singular(freq))?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(AcError::Singular(freq));
    }
    let mut v = Vec::with_capacity(n + 1);
    v.push(C64::new(0.0, 0.0));
    v.extend(x.iter().take(n).copied());
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub freqs: Vec<f64>,
    pub vout: Vec<C64>,
}

impl FrequencyResponse {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.vout.iter().map(|v| v.norm()).collect()
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.vout.iter().map(|v| 20.0 * v.norm().log10()).collect()
    }

    /// Interleaved `[re0, im0, re1, im1, ...]`.
    pub fn interleaved(&self) -> Vec<f64> {
        self.vout.iter().flat_map(|v| [v.re, v.im]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq,re,im\n");
        for (f, v) in self.freqs.iter().zip(&self.vout) {
            let _ = writeln!(s, "{f:?},{:?},{:?}", v.re, v.im);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, AcError> {
        let mut freqs = Vec::new();
        let mut vout = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("freq")) {
                continue;
            }
            let err = |reason: &str| AcError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let f: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| err("expected three numbers"))?;
            if f.len() != 3 {
                return Err(err("expected freq,re,im"));
            }
            freqs.push(f[0]);
            vout.push(C64::new(f[1], f[2]));
        }
        Ok(Self { freqs, vout })
    }
}

pub fn frequency_sweep(
    net: &Netlist,
    freqs: &[f64],
    out_node: usize,
) -> Result<FrequencyResponse, AcError> {
    if out_node >= net.num_nodes() {
        return Err(AcError::UnknownNode(out_node.to_string()));
    }
    let vout = freqs
        .iter()
        .map(|&f| ac_solve(net, f).map(|v| v[out_node]))
        .collect::<Result<_, _>>()?;
    Ok(FrequencyResponse {
        freqs: freqs.to_vec(),
        vout,
    })
}

/// `n` points spaced geometrically from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Doubly terminated band-pass Butterworth ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ButterworthSpec {
    pub order: usize,
    /// Source and load resistance (Ω).
    pub r0: f64,
    /// Center frequency (Hz).
    pub f0: f64,
    /// Passband width (Hz).
    pub bandwidth: f64,
}

impl Default for ButterworthSpec {
    fn default() -> Self {
        Self {
            order: 5,
            r0: 1_000.0,
            f0: 10_000.0,
            bandwidth: 4_000.0,
        }
    }
}

impl ButterworthSpec {
    /// Low-pass prototype element values `g_k = 2 sin((2k-1)π / 2n)`.
    pub fn prototype(&self) -> Vec<f64> {
        let n = self.order as f64;
        (1..=self.order)
            .map(|k| 2.0 * ((2.0 * k as f64 - 1.0) * PI / (2.0 * n)).sin())
            .collect()
    }
}

/// Reference band-pass filter: `Vs` (1 V) with source resistor `Rs`, then
/// alternating series LC arms (`L1,C1`, `L3,C3`, ...) and shunt LC tanks
/// (`L2‖C2`, ...), terminated by `RL`. Shorts `S2`, `S4`, ... sit across each
/// shunt tank and start disconnected. Output node is `out`.
pub fn butterworth_bandpass(spec: &ButterworthSpec) -> Netlist {
    let w0 = 2.0 * PI * spec.f0;
    let dw = 2.0 * PI * spec.bandwidth;
    let r0 = spec.r0;
    let mut net = Netlist::new();
    let add = |net: &mut Netlist, k, name: &str, a: &str, b: &str, v| {
        net.add(k, name, a, b, v)
            .expect("reference netlist is valid");
    };
    add(&mut net, ComponentKind::VacSource, "Vs", "in", "0", 1.0);
    add(&mut net, ComponentKind::Resistor, "Rs", "in", "n0", r0);
    let mut node = "n0".to_string();
    let g = spec.prototype();
    for (k, gk) in g.iter().enumerate() {
        let idx = k + 1;
        let last = idx == spec.order;
        if idx % 2 == 1 {
            let mid = format!("m{idx}");
            let next = if last {
                "out".to_string()
            } else {
                format!("n{idx}")
            };
            add(
                &mut net,
                ComponentKind::Inductor,
                &format!("L{idx}"),
                &node,
                &mid,
                gk * r0 / dw,
            );
            add(
                &mut net,
                ComponentKind::Capacitor,
                &format!("C{idx}"),
                &mid,
                &next,
                dw / (w0 * w0 * gk * r0),
            );
            node = next;
        } else {
            add(
                &mut net,
                ComponentKind::Inductor,
                &format!("L{idx}"),
                &node,
                "0",
                r0 * dw / (w0 * w0 * gk),
            );
            add(
                &mut net,
                ComponentKind::Capacitor,
                &format!("C{idx}"),
                &node,
                "0",
                gk / (r0 * dw),
            );
            add(
                &mut net,
                ComponentKind::Short,
                &format!("S{idx}"),
                &node,
                "0",
                0.0,
            );
            net.component_mut(&format!("S{idx}"))
                .expect("just added")
                .connected = false;
        }
    }
    if spec.order.is_multiple_of(2) {
        // even order ends on a shunt arm: rename it so the output is `out`
        let i = net.node_index.remove(&node).expect("node exists");
        net.nodes[i] = "out".to_string();
        net.node_index.insert("out".to_string(), i);
        node = "out".to_string();
    }
    add(&mut net, ComponentKind::Resistor, "RL", &node, "0", r0);
    net
}
