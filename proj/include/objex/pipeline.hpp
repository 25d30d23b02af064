#pragma once

#include "objex/box.hpp"
#include "objex/image.hpp"
#include "objex/network.hpp"

namespace objex {

struct MaskPrediction {
    Tensor probabilities;  // m*m values in (0,1)
    Mask binary;           // m x m, probability > threshold
};

struct CropResult {
    Image crop;
    Box px_box;            // the pixel-space rectangle actually cropped
    bool expanded = false; // true when the box hit the 2-pixel minimum size
};

struct Extraction {
    Box box;               // normalized frame
    MaskPrediction mask;   // m x m
    Mask full_mask;        // painted back to source-image size
};

// Converts an image to the loc net's input tensor (resize to configured dims).
Tensor image_to_tensor(const Image& img, int h, int w);

// Runs the localization net on the (resized) image and clamps the raw output
// to a valid box in the normalized frame.
Box localize(const Image& img, const Network& loc, const ModelConfig& cfg);

// Maps a normalized box into source pixels and extracts the segmentation
// input crop. Boxes thinner than 2 source pixels are expanded and flagged.
CropResult crop_resize(const Image& img, const Box& box, const ModelConfig& cfg);

MaskPrediction segment(const Image& crop, const Network& seg, const ModelConfig& cfg);

// Full inference chain, plus nearest-neighbor paint-back of the binary mask
// into source-image coordinates.
Extraction extract(const Image& img, const Network& loc, const Network& seg,
                   const ModelConfig& cfg);

// Groundtruth mask resampled into the m x m frame of a pixel-space box; the
// training target for the segmentation net.
Mask target_mask(const Mask& gt, const Box& px_box, int m);

// Paints an m x m binary mask into an h x w canvas inside px_box
// (nearest-neighbor upsample; background elsewhere).
Mask paint_back(const Mask& m, const Box& px_box, int img_h, int img_w);

Mask binarize(const Tensor& probabilities, int side, double threshold);

}  // namespace objex
