//! Receptive-field arithmetic for stacked convolutions.

/// Spatial geometry of one convolution layer, ignoring channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerDesc {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Receptive field of one output unit of the last layer, in input pixels.
/// Standard recurrence, walked from the top of the stack down:
/// rf' = rf * stride + (kernel - stride).
pub fn receptive_field(stack: &[ConvLayerDesc]) -> usize {
    let mut rf = 1usize;
    for layer in stack.iter().rev() {
        rf = rf * layer.stride + (layer.kernel - layer.stride);
    }
    rf
}

/// Output extent along one axis for a given input extent.
pub fn output_extent(stack: &[ConvLayerDesc], input: usize) -> usize {
    let mut size = input;
    for layer in stack {
        size = (size + 2 * layer.pad - layer.kernel) / layer.stride + 1;
    }
    size
}

/// Projects one output position back to the inclusive input coordinate span
/// it sees. Coordinates can be negative or beyond the input when padding is
/// involved; the span length always equals the receptive field.
pub fn input_span(stack: &[ConvLayerDesc], out_index: usize) -> (isize, isize) {
    let mut start = out_index as isize;
    let mut end = out_index as isize;
    for layer in stack.iter().rev() {
        start = start * layer.stride as isize - layer.pad as isize;
        end = end * layer.stride as isize - layer.pad as isize + layer.kernel as isize - 1;
    }
    (start, end)
}
