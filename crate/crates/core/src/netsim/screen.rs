//! Synthetic companion-app screenshots.

use rand::Rng;

use crate::model::DeviceId;
use crate::probes::Raster;

pub const SCREEN_WIDTH: usize = 24;
pub const SCREEN_HEIGHT: usize = 16;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// The screen shown while the device's function is working.
pub fn reference_screen(device: &DeviceId) -> Raster {
    let h = fnv1a(device.as_str().as_bytes());
    let base = [(h & 0x3f) as u8, ((h >> 8) & 0x3f) as u8, ((h >> 16) & 0x3f) as u8];
    let mut r = Raster::filled(SCREEN_WIDTH, SCREEN_HEIGHT, [0, 0, 0]);
    for y in 0..SCREEN_HEIGHT {
        for x in 0..SCREEN_WIDTH {
            let shade = (x + y * 2) as u8;
            r.set(x, y, base.map(|c| 120 + c + shade));
        }
    }
    r
}

/// A screenshot taken after the probe decided what the app shows: the
/// working screen with sensor jitter and a small overlay, or a dark error
/// screen.
pub fn render_screen<R: Rng>(device: &DeviceId, working: bool, rng: &mut R) -> Raster {
    if !working {
        let mut r = Raster::filled(SCREEN_WIDTH, SCREEN_HEIGHT, [32, 32, 36]);
        for x in 4..SCREEN_WIDTH - 4 {
            r.set(x, SCREEN_HEIGHT / 2, [200, 40, 40]);
        }
        return r;
    }
    let mut r = reference_screen(device);
    for y in 0..SCREEN_HEIGHT {
        for x in 0..SCREEN_WIDTH {
            let p = r.get(x, y);
            let jitter: i16 = rng.gen_range(-8..=8);
            r.set(x, y, p.map(|c| (i16::from(c) + jitter).clamp(0, 255) as u8));
        }
    }
    // timestamp overlay in the corner
    for x in 0..6 {
        r.set(x, 0, [255, 255, 255]);
    }
    r
}
