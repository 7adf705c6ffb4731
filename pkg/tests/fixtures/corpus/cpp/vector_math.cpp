#include <cmath>
#include <stdexcept>
#include <vector>

namespace geo {

class Vec3 {
 public:
  Vec3(double x, double y, double z) : x_(x), y_(y), z_(z) {}

  double norm() const {
    return std::sqrt(x_ * x_ + y_ * y_ + z_ * z_);
  }

  Vec3 operator+(const Vec3& other) const {
    return Vec3(x_ + other.x_, y_ + other.y_, z_ + other.z_);
  }

  bool operator==(const Vec3& other) const {
    return x_ == other.x_ && y_ == other.y_ && z_ == other.z_;
  }

  double dot(const Vec3& other) const {
    return x_ * other.x_ + y_ * other.y_ + z_ * other.z_;
  }

 private:
  double x_;
  double y_;
  double z_;
};

Vec3 centroid(const std::vector<Vec3>& points) {
  if (points.empty()) {
    throw std::invalid_argument("no points");
  }
  Vec3 sum(0.0, 0.0, 0.0);
  for (const Vec3& p : points) {
    sum = sum + p;
  }
  return sum;
}

}  // namespace geo
