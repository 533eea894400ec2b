#pragma once

#include <cstddef>
#include <string>

#include "meshseq/tensor.hpp"

namespace meshseq {

enum class Layout {
    FramesCHW,   // (B*T) x C x H x W
    BTCHW,       // B x T x C x H x W
    SitesTC,     // (B*H*W) x T x C
};

std::string to_string(Layout layout);

struct VideoDims {
    std::size_t B = 1, T = 1, C = 1, H = 1, W = 1;

    std::size_t numel() const { return B * T * C * H * W; }
    std::size_t sites() const { return H * W; }
    bool operator==(const VideoDims&) const = default;
};

Shape layout_shape(const VideoDims& dims, Layout layout);

// A latent video tensor tagged with its axis layout. The tag and the data
// shape change together; a mismatch is rejected on construction.
class LatentVideo {
public:
    LatentVideo() = default;
    LatentVideo(Tensor data, Layout layout, VideoDims dims);

    const Tensor& data() const { return data_; }
    Layout layout() const { return layout_; }
    const VideoDims& dims() const { return dims_; }

private:
    Tensor data_;
    Layout layout_ = Layout::FramesCHW;
    VideoDims dims_;
};

// Differentiable; element (b, t, c, h, w) moves to its slot in `target`.
LatentVideo rearrange(const LatentVideo& video, Layout target);

// (B*T) x C x H x W  <->  (B*T) x (H*W) x C, the per-frame vertex-row view
// used by graph convolution and cross-attention.
Tensor frames_to_sites(const LatentVideo& video);
LatentVideo sites_to_frames(const Tensor& sites, const VideoDims& dims);

}  // namespace meshseq
