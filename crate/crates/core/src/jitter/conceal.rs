/// Fills frame slots whose packet is missing at playout time.
///
/// `out` holds interleaved samples for the missing frames; `position` is the
/// frame index of `out[0]` relative to the stream origin.
pub trait Concealment: Send {
    fn conceal(&mut self, out: &mut [i16], position: i64, channels: u16);
}

/// Replaces missing audio with digital silence.
#[derive(Debug, Default, Clone, Copy)]
pub struct Silence;

impl Concealment for Silence {
    fn conceal(&mut self, out: &mut [i16], _position: i64, _channels: u16) {
        out.fill(0);
    }
}
