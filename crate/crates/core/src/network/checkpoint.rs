//! Text checkpoints of the complete optimizer state.
//!
//! ```text
//! caliper-checkpoint v1
//! epoch <n>
//! streak <consecutive non-finite epochs>
//! network <activation> <size0> <size1> ...
//! params <count>
//! <value>                          (count lines)
//! adam <lr> <beta1> <beta2> <eps> <step> <count>
//! <m> <v>                          (count lines)
//! material <count>
//! <log value>                      (count lines)
//! material-adam <lr> <beta1> <beta2> <eps> <step> <count>
//! <m> <v>                          (count lines)
//! ```
//! Floats use the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, AdamState, MlpState};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "caliper-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Number of completed epochs.
    pub epoch: usize,
    pub nonfinite_streak: usize,
    pub mlp: MlpState,
    pub adam: AdamState,
    /// Trainable material parameters in log space.
    pub material: Vec<f64>,
    pub material_adam: AdamState,
}

fn write_adam(out: &mut String, tag: &str, a: &AdamState) {
    writeln!(out, "{tag} {} {} {} {} {} {}", a.lr, a.beta1, a.beta2, a.eps, a.step, a.m.len()).unwrap();
    for (m, v) in a.m.iter().zip(&a.v) {
        writeln!(out, "{m} {v}").unwrap();
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
        writeln!(out, "epoch {}", self.epoch).unwrap();
        writeln!(out, "streak {}", self.nonfinite_streak).unwrap();
        let sizes: Vec<String> = self.mlp.sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "network {} {}", self.mlp.activation().name(), sizes.join(" ")).unwrap();
        writeln!(out, "params {}", self.mlp.param_count()).unwrap();
        for p in self.mlp.params() {
            writeln!(out, "{p}").unwrap();
        }
        write_adam(&mut out, "adam", &self.adam);
        writeln!(out, "material {}", self.material.len()).unwrap();
        for p in &self.material {
            writeln!(out, "{p}").unwrap();
        }
        write_adam(&mut out, "material-adam", &self.material_adam);
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser {
            lines: text.lines().enumerate(),
            line: 0,
        };
        if p.next_line()?.trim() != CHECKPOINT_HEADER {
            return Err(p.err(format!("expected header `{CHECKPOINT_HEADER}`")));
        }
        let epoch = p.keyed("epoch")?;
        let nonfinite_streak = p.keyed("streak")?;
        let net = p.tokens()?;
        if net.len() < 4 || net[0] != "network" {
            return Err(p.err("expected `network <activation> <sizes...>`"));
        }
        let activation = Activation::parse(&net[1]).map_err(|e| p.err(e.to_string()))?;
        let sizes = net[2..]
            .iter()
            .map(|s| p.num::<usize>(s))
            .collect::<Result<Vec<usize>>>()?;
        let count: usize = p.keyed("params")?;
        let params = (0..count).map(|_| p.single()).collect::<Result<Vec<f64>>>()?;
        let mlp = MlpState::from_params(&sizes, activation, params).map_err(|e| p.err(e.to_string()))?;
        let adam = p.adam("adam")?;
        let n_mat: usize = p.keyed("material")?;
        let material = (0..n_mat).map(|_| p.single()).collect::<Result<Vec<f64>>>()?;
        let material_adam = p.adam("material-adam")?;
        if adam.m.len() != mlp.param_count() || material_adam.m.len() != material.len() {
            return Err(p.err("optimizer state does not match parameter counts"));
        }
        Ok(Self {
            epoch,
            nonfinite_streak,
            mlp,
            adam,
            material,
            material_adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of checkpoint"))
            }
        }
    }

    fn tokens(&mut self) -> Result<Vec<String>> {
        Ok(self.next_line()?.split_whitespace().map(str::to_string).collect())
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("invalid number `{s}`")))
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let t = self.tokens()?;
        if t.len() != 2 || t[0] != key {
            return Err(self.err(format!("expected `{key} <value>`")));
        }
        self.num(&t[1])
    }

    fn single(&mut self) -> Result<f64> {
        let t = self.tokens()?;
        if t.len() != 1 {
            return Err(self.err("expected one value"));
        }
        self.num(&t[0])
    }

    fn adam(&mut self, key: &str) -> Result<AdamState> {
        let t = self.tokens()?;
        if t.len() != 7 || t[0] != key {
            return Err(self.err(format!("expected `{key} <lr> <beta1> <beta2> <eps> <step> <count>`")));
        }
        let count: usize = self.num(&t[6])?;
        let mut a = AdamState::new(count, self.num(&t[1])?);
        a.beta1 = self.num(&t[2])?;
        a.beta2 = self.num(&t[3])?;
        a.eps = self.num(&t[4])?;
        a.step = self.num(&t[5])?;
        for k in 0..count {
            let mv = self.tokens()?;
            if mv.len() != 2 {
                return Err(self.err("expected `<m> <v>`"));
            }
            a.m[k] = self.num(&mv[0])?;
            a.v[k] = self.num(&mv[1])?;
        }
        Ok(a)
    }
}
