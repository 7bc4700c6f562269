use super::EntropyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub value: u32,
    pub len: u32,
}

/// Maximal runs: adjacent runs always carry different values.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunList(pub Vec<Run>);

impl RunList {
    pub fn runs(&self) -> &[Run] {
        &self.0
    }

    pub fn expanded_len(&self) -> u64 {
        self.0.iter().map(|r| r.len as u64).sum()
    }
}

pub fn rle_encode(values: &[u32]) -> RunList {
    let mut runs: Vec<Run> = Vec::new();
    for &v in values {
        match runs.last_mut() {
            Some(r) if r.value == v => r.len += 1,
            _ => runs.push(Run { value: v, len: 1 }),
        }
    }
    RunList(runs)
}

pub fn rle_decode(runs: &RunList) -> Vec<u32> {
    let mut out = Vec::with_capacity(runs.expanded_len() as usize);
    for r in runs.runs() {
        out.extend(std::iter::repeat(r.value).take(r.len as usize));
    }
    out
}

/// Length symbol meaning "255 more, and continue".
pub const RUN_CONTINUE: u32 = 255;

/// Splits a run length into symbols `< 256`: `k` copies of [`RUN_CONTINUE`]
/// followed by the remainder in `0..255`, so `len = 255 * k + last`.
pub fn run_length_symbols(len: u32) -> impl Iterator<Item = u32> {
    let k = len / RUN_CONTINUE;
    std::iter::repeat(RUN_CONTINUE)
        .take(k as usize)
        .chain(std::iter::once(len % RUN_CONTINUE))
}

/// Inverse of [`run_length_symbols`], pulling symbols from `next`.
pub(crate) fn read_run_length(
    mut next: impl FnMut() -> Result<u32, EntropyError>,
) -> Result<u64, EntropyError> {
    let mut len: u64 = 0;
    loop {
        let s = next()?;
        if s == RUN_CONTINUE {
            len += RUN_CONTINUE as u64;
        } else if s < RUN_CONTINUE {
            return Ok(len + s as u64);
        } else {
            return Err(EntropyError::Malformed {
                bit_offset: 0,
                reason: format!("run-length symbol {s} out of range"),
            });
        }
    }
}
