#pragma once

#include "densiclip/array.hpp"

namespace densiclip {

// Half-open crop window [r0,r1) x [c0,c1) in raw-image coordinates.
struct CropBox {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;

    int height() const { return r1 - r0; }
    int width() const { return c1 - c0; }
};

struct PreprocessResult {
    Array image; // {out_size, out_size}, min 0 / max 1
    CropBox crop;
};

// The standardization chain applied to every raw grayscale image:
//   1. zero near-saturated connected components (>= 98% of the dynamic
//      range, smaller than 2% of the image) that lie outside the largest
//      Otsu-foreground component — burned-in annotation removal;
//   2. crop to the bounding box of the largest foreground component;
//   3. bilinear resize (corner-aligned sampling) to out_size x out_size;
//   4. min-max normalize to [0,1].
// Re-running the chain on its own output is an identity up to 1e-6.
PreprocessResult preprocess_image(const Array& raw, int out_size = 224);

// Applies the same crop + resize geometry to a parallel 0/1 ground-truth
// mask (bilinear, then thresholded at 0.5).
Array transform_mask(const Array& mask, const CropBox& crop, int out_size = 224);

// Foreground/background split maximizing between-class variance over a
// 256-bin histogram. Requires a non-constant image.
double otsu_threshold(const Array& image);

// Corner-aligned bilinear resampling: output corners sample input corners
// exactly, so edge rows and columns survive resizing unchanged.
Array bilinear_resize(const Array& src, int out_h, int out_w);

} // namespace densiclip
