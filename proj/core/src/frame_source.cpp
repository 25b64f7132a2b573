#include <lineagetrack/frame_source.hpp>

#include <lineagetrack/error.hpp>

namespace lineagetrack {

InMemoryFrames::InMemoryFrames(std::vector<Volume> frames) : frames_(std::move(frames)) {
  if (frames_.empty()) throw Error("frame sequence is empty", "shape");
  for (std::size_t t = 0; t < frames_.size(); ++t) {
    const Volume& v = frames_[t];
    if (v.shape() != frames_.front().shape() || v.dtype() != frames_.front().dtype() || v.ndim() != frames_.front().ndim())
      throw Error("frame " + std::to_string(t) + " differs in shape or dtype from frame 0", "shape");
    frames_[t].set_t(static_cast<int>(t));
  }
}

Volume InMemoryFrames::read_box(int t, const Box& box) const {
  if (t < 0 || t >= n_frames()) throw Error("frame index out of range: " + std::to_string(t), "shape");
  return frames_[static_cast<std::size_t>(t)].crop(box);
}

} // namespace lineagetrack
