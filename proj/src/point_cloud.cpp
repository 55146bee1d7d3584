#include "mcslam/point_cloud.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>

#include "mcslam/random.hpp"

namespace mcslam {
namespace {

std::uint64_t hash_index(const VoxelIndex& v) {
  const auto pack = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(v.x())) << 42) ^
                    (static_cast<std::uint64_t>(static_cast<std::uint32_t>(v.y())) << 21) ^
                    static_cast<std::uint64_t>(static_cast<std::uint32_t>(v.z()));
  return splitmix64(pack);
}

struct IndexHash {
  std::size_t operator()(const VoxelIndex& v) const { return static_cast<std::size_t>(hash_index(v)); }
};

struct IndexEqual {
  bool operator()(const VoxelIndex& a, const VoxelIndex& b) const { return a == b; }
};

}  // namespace

Matrix3d plane_regularized(const Matrix3d& cov, double epsilon) {
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
  const Vector3d values(epsilon, 1.0, 1.0);  // eigenvalues come back ascending
  const Matrix3d& v = eig.eigenvectors();
  Matrix3d out = v * values.asDiagonal() * v.transpose();
  return 0.5 * (out + out.transpose());
}

Scan estimate_covariances(std::span<const Vector3d> points, int k, double timestamp) {
  if (k < 4) throw InvalidArgument("estimate_covariances: k must be >= 4, got " + std::to_string(k));
  if (points.size() < static_cast<std::size_t>(k) + 1) {
    throw InvalidArgument("estimate_covariances: need at least k+1 = " + std::to_string(k + 1) +
                          " points, got " + std::to_string(points.size()));
  }

  const std::size_t n = points.size();
  Scan scan;
  scan.timestamp = timestamp;
  scan.points.resize(n);

  std::vector<std::pair<double, std::size_t>> dist(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist[m++] = {(points[j] - points[i]).squaredNorm(), j};
    }
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());

    Vector3d mean = Vector3d::Zero();
    for (int a = 0; a < k; ++a) mean += points[dist[a].second];
    mean /= k;
    Matrix3d cov = Matrix3d::Zero();
    for (int a = 0; a < k; ++a) {
      const Vector3d d = points[dist[a].second] - mean;
      cov += d * d.transpose();
    }
    cov /= (k - 1);

    scan.points[i].mean = points[i];
    scan.points[i].covariance = plane_regularized(cov);
  }
  return scan;
}

VoxelMap::VoxelMap(double resolution) : resolution_(resolution), inv_resolution_(1.0 / resolution) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw InvalidArgument("VoxelMap: resolution must be positive, got " + std::to_string(resolution));
  }
}

void VoxelMap::freeze() {
  std::size_t capacity = 16;
  while (capacity < cells_.size() * 2) capacity <<= 1;
  slots_.assign(capacity, -1);
  mask_ = capacity - 1;
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    std::uint64_t slot = hash_index(cells_[c].index) & mask_;
    while (slots_[slot] >= 0) slot = (slot + 1) & mask_;
    slots_[slot] = static_cast<std::int32_t>(c);
  }

  std::unordered_map<VoxelIndex, std::int32_t, IndexHash, IndexEqual> seen;
  seen.reserve(cells_.size() * 8);
  halo_.clear();
  candidates_.clear();
  for (const auto& cell : cells_) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const VoxelIndex v = cell.index + VoxelIndex(dx, dy, dz);
          if (seen.try_emplace(v, static_cast<std::int32_t>(halo_.size())).second) halo_.push_back({v});
        }
      }
    }
  }
  for (auto& h : halo_) {
    h.begin = static_cast<std::uint32_t>(candidates_.size());
    if (const VoxelCell* self = find(h.index)) {
      h.self = static_cast<std::int32_t>(self - cells_.data());
    } else {
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dz = -1; dz <= 1; ++dz) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            if (const VoxelCell* c = find(h.index + VoxelIndex(dx, dy, dz))) {
              candidates_.push_back(static_cast<std::int32_t>(c - cells_.data()));
            }
          }
        }
      }
    }
    h.end = static_cast<std::uint32_t>(candidates_.size());
  }
  capacity = 16;
  while (capacity < halo_.size() * 2) capacity <<= 1;
  halo_slots_.assign(capacity, -1);
  halo_mask_ = capacity - 1;
  for (std::size_t e = 0; e < halo_.size(); ++e) {
    std::uint64_t slot = hash_index(halo_[e].index) & halo_mask_;
    while (halo_slots_[slot] >= 0) slot = (slot + 1) & halo_mask_;
    halo_slots_[slot] = static_cast<std::int32_t>(e);
  }
}

const VoxelMap::HaloEntry* VoxelMap::find_halo(const VoxelIndex& index) const {
  if (halo_.empty()) return nullptr;
  std::uint64_t slot = hash_index(index) & halo_mask_;
  while (true) {
    const std::int32_t e = halo_slots_[slot];
    if (e < 0) return nullptr;
    if (halo_[e].index == index) return &halo_[e];
    slot = (slot + 1) & halo_mask_;
  }
}

const VoxelCell* VoxelMap::find(const VoxelIndex& index) const {
  if (cells_.empty()) return nullptr;
  std::uint64_t slot = hash_index(index) & mask_;
  while (true) {
    const std::int32_t c = slots_[slot];
    if (c < 0) return nullptr;
    if (cells_[c].index == index) return &cells_[c];
    slot = (slot + 1) & mask_;
  }
}

const VoxelCell* VoxelMap::nearest(const Vector3d& query) const {
  const HaloEntry* h = find_halo(index_of(query));
  if (!h) return nullptr;
  if (h->self >= 0) return &cells_[h->self];
  const VoxelCell* best = nullptr;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::uint32_t k = h->begin; k < h->end; ++k) {
    const VoxelCell& cell = cells_[candidates_[k]];
    const double d2 = (cell.aggregate.mean - query).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = &cell;
    }
  }
  return best;
}

std::size_t VoxelMap::memory_bytes() const {
  return cells_.capacity() * sizeof(VoxelCell) + slots_.capacity() * sizeof(std::int32_t) +
         halo_.capacity() * sizeof(HaloEntry) + (candidates_.capacity() + halo_slots_.capacity()) * sizeof(std::int32_t);
}

VoxelMap build_voxel_map(const Scan& scan, double resolution) {
  VoxelMap map(resolution);
  std::unordered_map<VoxelIndex, std::size_t, IndexHash, IndexEqual> lookup;
  lookup.reserve(scan.size());
  for (const auto& p : scan.points) {
    const VoxelIndex idx = map.index_of(p.mean);
    auto [it, inserted] = lookup.try_emplace(idx, map.cells_.size());
    if (inserted) {
      VoxelCell cell;
      cell.index = idx;
      map.cells_.push_back(cell);
    }
    VoxelCell& cell = map.cells_[it->second];
    cell.aggregate.mean += p.mean;
    cell.aggregate.covariance += p.covariance;
    ++cell.count;
  }
  for (auto& cell : map.cells_) {
    cell.aggregate.mean /= cell.count;
    cell.aggregate.covariance /= cell.count;
  }
  map.freeze();
  return map;
}

std::optional<GaussianPoint3d> find_correspondence(const VoxelMap& map, const Vector3d& query) {
  if (const VoxelCell* cell = map.nearest(query)) return cell->aggregate;
  return std::nullopt;
}

double overlap_rate(const Scan& scan, const Pose3d& rel_pose, const VoxelMap& map) {
  if (scan.empty()) throw InvalidArgument("overlap_rate: empty scan");
  std::size_t inside = 0;
  for (const auto& p : scan.points) {
    if (map.occupied(rel_pose * p.mean)) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(scan.size());
}

Scan transformed(const Scan& scan, const Pose3d& pose) {
  Scan out;
  out.timestamp = scan.timestamp;
  out.points.reserve(scan.size());
  for (const auto& p : scan.points) out.points.push_back(transform_gaussian(pose, p));
  return out;
}

std::vector<Vector3d> means_of(const Scan& scan) {
  std::vector<Vector3d> out;
  out.reserve(scan.size());
  for (const auto& p : scan.points) out.push_back(p.mean);
  return out;
}

}  // namespace mcslam
