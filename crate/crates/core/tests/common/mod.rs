//! Layer tables written out by hand, shared by the model and acceptance tests.
#![allow(dead_code)]

/// (name, cin, cout, groups) of the spatial denoiser, written out by hand.
pub const SPATIAL_TABLE: &[(&str, usize, usize, usize)] = &[
    ("enc_conv0", 3, 48, 1),
    ("enc_conv1a", 48, 48, 1),
    ("enc_conv1b", 48, 48, 1),
    ("enc_conv2a", 48, 48, 1),
    ("enc_conv2b", 48, 48, 1),
    ("enc_conv3a", 48, 48, 1),
    ("enc_conv3b", 48, 48, 1),
    ("enc_conv4a", 48, 48, 1),
    ("enc_conv4b", 48, 48, 1),
    ("enc_conv5a", 48, 48, 1),
    ("enc_conv5b", 48, 48, 1),
    ("enc_conv6", 48, 48, 1),
    ("dec_conv5a", 96, 96, 1),
    ("dec_conv5b", 96, 96, 1),
    ("dec_conv4a", 144, 96, 1),
    ("dec_conv4b", 96, 96, 1),
    ("dec_conv3a", 144, 96, 1),
    ("dec_conv3b", 96, 96, 1),
    ("dec_conv2a", 144, 96, 1),
    ("dec_conv2b", 96, 96, 1),
    ("dec_conv1a", 99, 64, 1),
    ("dec_conv1b", 64, 32, 1),
    ("dec_conv0", 32, 3, 1),
];

pub const BLOCK_TABLE: &[(&str, usize, usize, usize)] = &[
    ("enc_conv1a", 12, 90, 3),
    ("enc_conv1b", 90, 32, 1),
    ("enc_conv1c", 32, 64, 1),
    ("enc_conv2a", 64, 64, 1),
    ("enc_conv2b", 64, 64, 1),
    ("enc_conv2c", 64, 128, 1),
    ("enc_conv3a", 128, 128, 1),
    ("enc_conv3b", 128, 128, 1),
    ("dec_conv3a", 128, 128, 1),
    ("dec_conv3b", 128, 128, 1),
    ("dec_conv3c", 128, 256, 1),
    ("dec_conv2a", 64, 64, 1),
    ("dec_conv2b", 64, 64, 1),
    ("dec_conv2c", 64, 128, 1),
    ("dec_conv1a", 32, 32, 1),
    ("dec_conv1b", 32, 3, 1),
];

pub fn table_count(table: &[(&str, usize, usize, usize)]) -> usize {
    table.iter().map(|&(_, cin, cout, g)| cout * (cin / g * 9 + 1)).sum()
}
