#include "meshseq/latent_video.hpp"

#include "meshseq/ops.hpp"

namespace meshseq {

std::string to_string(Layout layout) {
    switch (layout) {
        case Layout::FramesCHW: return "(B T) C H W";
        case Layout::BTCHW: return "B T C H W";
        case Layout::SitesTC: return "(B H W) T C";
    }
    return "?";
}

Shape layout_shape(const VideoDims& d, Layout layout) {
    switch (layout) {
        case Layout::FramesCHW: return {d.B * d.T, d.C, d.H, d.W};
        case Layout::BTCHW: return {d.B, d.T, d.C, d.H, d.W};
        case Layout::SitesTC: return {d.B * d.H * d.W, d.T, d.C};
    }
    throw ShapeError("unknown layout");
}

LatentVideo::LatentVideo(Tensor data, Layout layout, VideoDims dims)
    : data_(std::move(data)), layout_(layout), dims_(dims) {
    if (!data_.defined() || data_.shape() != layout_shape(dims_, layout_))
        throw ShapeError("latent video: data " +
                         (data_.defined() ? shape_str(data_.shape()) : std::string("<none>")) +
                         " does not match layout " + to_string(layout_) + " " +
                         shape_str(layout_shape(dims_, layout_)));
}

namespace {

Tensor to_btchw(const LatentVideo& v) {
    const VideoDims& d = v.dims();
    switch (v.layout()) {
        case Layout::BTCHW: return v.data();
        case Layout::FramesCHW: return reshape(v.data(), layout_shape(d, Layout::BTCHW));
        case Layout::SitesTC:
            // [B, H, W, T, C] -> [B, T, C, H, W]
            return permute(reshape(v.data(), {d.B, d.H, d.W, d.T, d.C}), {0, 3, 4, 1, 2});
    }
    throw ShapeError("unknown layout");
}

}  // namespace

LatentVideo rearrange(const LatentVideo& v, Layout target) {
    if (v.layout() == target) return v;
    const VideoDims& d = v.dims();
    Tensor x = to_btchw(v);
    switch (target) {
        case Layout::BTCHW: break;
        case Layout::FramesCHW: x = reshape(x, layout_shape(d, target)); break;
        case Layout::SitesTC:
            // [B, T, C, H, W] -> [B, H, W, T, C]
            x = reshape(permute(x, {0, 3, 4, 1, 2}), layout_shape(d, target));
            break;
    }
    return LatentVideo(std::move(x), target, d);
}

Tensor frames_to_sites(const LatentVideo& v) {
    const VideoDims& d = v.dims();
    const LatentVideo f = rearrange(v, Layout::FramesCHW);
    return permute(reshape(f.data(), {d.B * d.T, d.C, d.sites()}), {0, 2, 1});
}

LatentVideo sites_to_frames(const Tensor& sites, const VideoDims& d) {
    if (sites.shape() != Shape{d.B * d.T, d.sites(), d.C})
        throw ShapeError("sites_to_frames: expected " +
                         shape_str({d.B * d.T, d.sites(), d.C}) + ", got " +
                         shape_str(sites.shape()));
    return LatentVideo(reshape(permute(sites, {0, 2, 1}), layout_shape(d, Layout::FramesCHW)),
                       Layout::FramesCHW, d);
}

}  // namespace meshseq
