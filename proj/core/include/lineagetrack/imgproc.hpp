#pragma once

#include <lineagetrack/lineage.hpp>
#include <lineagetrack/volume.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace lineagetrack::imgproc {

/// Otsu level over a 256-bin histogram spanning [min, max]. Samples strictly
/// above the returned level are foreground. A constant input returns its value
/// (no foreground).
float otsu_threshold(std::span<const float> values);

struct Components {
  std::vector<std::int32_t> labels; ///< 0 = background, components numbered from 1 in raster order
  int count = 0;
};

/// Face-connected components (4-neighbourhood in 2D, 6 in 3D).
Components label_components(std::span<const std::uint8_t> foreground, const Shape& shape);

/// Euclidean distance from each foreground voxel to the nearest background
/// voxel, in physical units. Voxels outside the grid count as background.
std::vector<float> distance_transform(std::span<const std::uint8_t> foreground, const Shape& shape,
                                      const Spacing& spacing = {});

Volume gaussian_blur(const Volume& v, double sigma_z, double sigma_y, double sigma_x);

/// Scale-normalised negative Laplacian of Gaussian, -sigma^2 * LoG. Bright
/// blobs of radius ~ sigma*sqrt(ndim) give positive peaks. `sigma` is in
/// in-plane pixels; anisotropic z spacing is compensated.
Volume negative_log(const Volume& v, double sigma, const Spacing& spacing = {});

/// Mask of all voxels carrying component `id`, in the grid's coordinates.
InstanceMask component_mask(const Components& c, int id, const Shape& shape, int label = 1, int t = 0);

/// Masks from a dense label grid (0 = background).
DetectionSet masks_from_labels(std::span<const std::int32_t> labels, const Shape& shape, int t);

/// Dense label grid from a detection set (labels as stored).
std::vector<std::int32_t> labels_from_masks(const DetectionSet& ds, const Shape& shape);

} // namespace lineagetrack::imgproc
