//! Binary checkpoints holding the trained backbone. Fixed little-endian
//! layout so reruns produce byte-identical files:
//!   magic "MFRLCKPT" (8 bytes), u32 version = 1, then sections in
//!   ascending tag order, each `u8 tag, u64 payload length, payload`:
//!     1 network spec: u32 input dim, u32 hidden count, hidden dims as u32,
//!       u32 output dim, u8 activation (0 relu, 1 tanh, 2 erf)
//!     2 SGD parameters as f64 values
//!     3 SWA parameters, same layout (omitted when averaging was disabled)
//!     4 meta: u64 seed, 32-byte training-log digest, 32-byte config hash

use std::path::Path;

use mfrl_core::{Activation, MlpSpec, ParamVector};

use crate::error::{io_at, CliError, Result};

pub const MAGIC: &[u8; 8] = b"MFRLCKPT";
pub const VERSION: u32 = 1;

const SEC_SPEC: u8 = 1;
const SEC_SGD: u8 = 2;
const SEC_SWA: u8 = 3;
const SEC_META: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Sgd,
    Swa,
}

impl Which {
    pub fn name(self) -> &'static str {
        match self {
            Which::Sgd => "sgd",
            Which::Swa => "swa",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub theta_sgd: ParamVector,
    pub theta_swa: Option<ParamVector>,
    pub seed: u64,
    pub log_digest: [u8; 32],
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    pub fn params(&self, which: Which) -> Result<&ParamVector> {
        match which {
            Which::Sgd => Ok(&self.theta_sgd),
            Which::Swa => self.theta_swa.as_ref().ok_or_else(|| {
                CliError::Config(
                    "checkpoint has no averaged parameters (trained with swa duration 0)".into(),
                )
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());

        let mut spec = Vec::new();
        spec.extend_from_slice(&(self.spec.input_dim as u32).to_le_bytes());
        spec.extend_from_slice(&(self.spec.hidden_dims.len() as u32).to_le_bytes());
        for &h in &self.spec.hidden_dims {
            spec.extend_from_slice(&(h as u32).to_le_bytes());
        }
        spec.extend_from_slice(&(self.spec.output_dim as u32).to_le_bytes());
        spec.push(activation_code(self.spec.activation));
        section(&mut out, SEC_SPEC, &spec);

        section(&mut out, SEC_SGD, &param_bytes(&self.theta_sgd));
        if let Some(swa) = &self.theta_swa {
            section(&mut out, SEC_SWA, &param_bytes(swa));
        }

        let mut meta = Vec::with_capacity(8 + 64);
        meta.extend_from_slice(&self.seed.to_le_bytes());
        meta.extend_from_slice(&self.log_digest);
        meta.extend_from_slice(&self.config_hash);
        section(&mut out, SEC_META, &meta);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(format_error(0, "bad magic, not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(format_error(
                8,
                &format!("unsupported version {version}, expected {VERSION}"),
            ));
        }

        let mut offset = 12;
        let mut spec: Option<MlpSpec> = None;
        let mut theta_sgd: Option<ParamVector> = None;
        let mut theta_swa: Option<ParamVector> = None;
        let mut meta: Option<(u64, [u8; 32], [u8; 32])> = None;
        let mut last_tag = 0u8;
        while offset < bytes.len() {
            if offset + 9 > bytes.len() {
                return Err(format_error(offset, "truncated section header"));
            }
            let tag = bytes[offset];
            let len =
                u64::from_le_bytes(bytes[offset + 1..offset + 9].try_into().unwrap()) as usize;
            let body_at = offset + 9;
            if body_at + len > bytes.len() {
                return Err(format_error(body_at, "truncated section payload"));
            }
            if tag <= last_tag {
                return Err(format_error(
                    offset,
                    &format!("section tag {tag} out of order"),
                ));
            }
            last_tag = tag;
            let body = &bytes[body_at..body_at + len];
            match tag {
                SEC_SPEC => spec = Some(parse_spec(body, body_at)?),
                SEC_SGD | SEC_SWA => {
                    let s = spec.as_ref().ok_or_else(|| {
                        format_error(offset, "parameter section before spec section")
                    })?;
                    let params = parse_params(body, body_at, s)?;
                    if tag == SEC_SGD {
                        theta_sgd = Some(params);
                    } else {
                        theta_swa = Some(params);
                    }
                }
                SEC_META => {
                    if len != 8 + 32 + 32 {
                        return Err(format_error(body_at, "meta section has wrong length"));
                    }
                    let seed = u64::from_le_bytes(body[..8].try_into().unwrap());
                    let mut log_digest = [0u8; 32];
                    log_digest.copy_from_slice(&body[8..40]);
                    let mut config_hash = [0u8; 32];
                    config_hash.copy_from_slice(&body[40..72]);
                    meta = Some((seed, log_digest, config_hash));
                }
                other => {
                    return Err(format_error(offset, &format!("unknown section tag {other}")))
                }
            }
            offset = body_at + len;
        }
        let spec = spec.ok_or_else(|| format_error(offset, "missing spec section"))?;
        let theta_sgd =
            theta_sgd.ok_or_else(|| format_error(offset, "missing parameter section"))?;
        let (seed, log_digest, config_hash) =
            meta.ok_or_else(|| format_error(offset, "missing meta section"))?;
        Ok(Checkpoint {
            spec,
            theta_sgd,
            theta_swa,
            seed,
            log_digest,
            config_hash,
        })
    }
}

fn section(out: &mut Vec<u8>, tag: u8, body: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

fn param_bytes(params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8);
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Erf => 2,
    }
}

fn parse_spec(body: &[u8], at: usize) -> Result<MlpSpec> {
    let need = |n: usize| -> Result<()> {
        if n > body.len() {
            Err(format_error(at + body.len(), "truncated spec section"))
        } else {
            Ok(())
        }
    };
    need(8)?;
    let input_dim = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
    let hidden_count = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
    need(8 + 4 * hidden_count + 5)?;
    let mut hidden_dims = Vec::with_capacity(hidden_count);
    for i in 0..hidden_count {
        let p = 8 + 4 * i;
        hidden_dims.push(u32::from_le_bytes(body[p..p + 4].try_into().unwrap()) as usize);
    }
    let p = 8 + 4 * hidden_count;
    let output_dim = u32::from_le_bytes(body[p..p + 4].try_into().unwrap()) as usize;
    let activation = match body[p + 4] {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Erf,
        other => {
            return Err(format_error(
                at + p + 4,
                &format!("unknown activation code {other}"),
            ))
        }
    };
    if body.len() != p + 5 {
        return Err(format_error(at + p + 5, "trailing bytes in spec section"));
    }
    MlpSpec::new(input_dim, hidden_dims, output_dim, activation)
        .map_err(|e| CliError::Io(format!("byte {at}: invalid spec: {e}")))
}

fn parse_params(body: &[u8], at: usize, spec: &MlpSpec) -> Result<ParamVector> {
    let expect = spec.param_len();
    if body.len() != expect * 8 {
        return Err(format_error(
            at,
            &format!(
                "parameter section holds {} bytes, spec needs {}",
                body.len(),
                expect * 8
            ),
        ));
    }
    let mut params = ParamVector::zeros(spec.param_shapes());
    for (i, v) in params.values_mut().iter_mut().enumerate() {
        *v = f64::from_le_bytes(body[i * 8..i * 8 + 8].try_into().unwrap());
    }
    Ok(params)
}

fn format_error(offset: usize, what: &str) -> CliError {
    CliError::Io(format!("byte {offset}: {what}"))
}

pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    std::fs::write(path, cp.to_bytes()).map_err(|e| io_at(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| io_at(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
