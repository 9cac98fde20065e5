#include "geobeam/cover.hpp"

#include "geobeam/io.hpp"
#include "geobeam/kernels.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_map>

namespace geobeam {
namespace {

// ---------------------------------------------------------------------------
// Spatial hash over AoS points; per-dimension cell sizes with optional wrap.

class SpatialHash {
  public:
    SpatialHash(int edim, const Vec& periods, double cell) : edim_(edim), cell_(edim) {
        for (int c = 0; c < edim; ++c) {
            if (periods.size() == edim && periods[c] > 0) {
                const int n = std::max(1, static_cast<int>(std::round(periods[c] / cell)));
                cell_[c] = periods[c] / n;
                ncells_.push_back(n);
            } else {
                cell_[c] = cell;
                ncells_.push_back(0);  // unbounded
            }
        }
    }

    void build(std::vector<double>&& aos, std::vector<std::size_t>&& owner) {
        points_ = std::move(aos);
        owners_ = std::move(owner);
        const std::size_t count = owners_.size();
        std::unordered_map<std::uint64_t, std::vector<std::size_t>> tmp;
        for (std::size_t i = 0; i < count; ++i) tmp[key_at(&points_[i * edim_])].push_back(i);
        cells_.reserve(tmp.size());
        for (auto& [k, idx] : tmp) {
            Cell cell;
            cell.count = idx.size();
            cell.soa.resize(idx.size() * edim_);
            cell.owner.resize(idx.size());
            for (std::size_t j = 0; j < idx.size(); ++j) {
                for (int c = 0; c < edim_; ++c)
                    cell.soa[c * idx.size() + j] = points_[idx[j] * edim_ + c];
                cell.owner[j] = owners_[idx[j]];
            }
            cells_.emplace(k, std::move(cell));
        }
        points_.clear();
        points_.shrink_to_fit();
        owners_.clear();
        owners_.shrink_to_fit();
    }

    struct Result {
        double dist2 = std::numeric_limits<double>::infinity();
        std::size_t owner = static_cast<std::size_t>(-1);
        bool found = false;
    };

    // nearest stored point within the neighbor cells of the radius-ball at q
    Result nearest(const double* q, double radius) const {
        Result best;
        std::vector<long long> lo(edim_), hi(edim_);
        for (int c = 0; c < edim_; ++c) {
            lo[c] = static_cast<long long>(std::floor((q[c] - radius) / cell_[c]));
            hi[c] = static_cast<long long>(std::floor((q[c] + radius) / cell_[c]));
        }
        std::vector<long long> idx(lo);
        // account for wrap when querying near the seam
        std::vector<double> qw(q, q + edim_);
        while (true) {
            std::uint64_t k = 1469598103934665603ull;
            for (int c = 0; c < edim_; ++c) {
                long long cellidx = idx[c];
                if (ncells_[c] > 0) {
                    cellidx %= ncells_[c];
                    if (cellidx < 0) cellidx += ncells_[c];
                }
                k = (k ^ static_cast<std::uint64_t>(cellidx)) * 1099511628211ull;
            }
            const auto it = cells_.find(k);
            if (it != cells_.end()) {
                const Cell& cell = it->second;
                // shift the query into the same wrap image as this cell
                for (int c = 0; c < edim_; ++c) {
                    qw[c] = q[c];
                    if (ncells_[c] > 0) {
                        const double period = cell_[c] * ncells_[c];
                        const double cell_origin = idx[c] * cell_[c];
                        const double wrapped_origin =
                            (idx[c] - static_cast<long long>(
                                          std::floor(static_cast<double>(idx[c]) /
                                                     ncells_[c]) *
                                          ncells_[c])) *
                            cell_[c];
                        qw[c] = q[c] - (cell_origin - wrapped_origin);
                        (void)period;
                    }
                }
                const auto r =
                    kernels::nearest(cell.soa.data(), cell.count, edim_, qw.data());
                if (r.index < cell.count && r.dist2 < best.dist2) {
                    best.dist2 = r.dist2;
                    best.owner = cell.owner[r.index];
                    best.found = true;
                }
            }
            // advance multi-index
            int c = 0;
            for (; c < edim_; ++c) {
                if (idx[c] < hi[c]) {
                    ++idx[c];
                    for (int b = 0; b < c; ++b) idx[b] = lo[b];
                    break;
                }
            }
            if (c == edim_) break;
        }
        return best;
    }

    // distinct owners with any point within `radius` of q (up to max_owners)
    void collect_owners(const double* q, double radius, std::size_t max_owners,
                        std::vector<std::size_t>& out) const {
        out.clear();
        std::vector<long long> lo(edim_), hi(edim_);
        for (int c = 0; c < edim_; ++c) {
            lo[c] = static_cast<long long>(std::floor((q[c] - radius) / cell_[c]));
            hi[c] = static_cast<long long>(std::floor((q[c] + radius) / cell_[c]));
        }
        const double r2 = radius * radius;
        std::vector<long long> idx(lo);
        std::vector<double> qw(q, q + edim_);
        while (true) {
            std::uint64_t k = 1469598103934665603ull;
            for (int c = 0; c < edim_; ++c) {
                long long cellidx = idx[c];
                if (ncells_[c] > 0) {
                    cellidx %= ncells_[c];
                    if (cellidx < 0) cellidx += ncells_[c];
                }
                k = (k ^ static_cast<std::uint64_t>(cellidx)) * 1099511628211ull;
            }
            const auto it = cells_.find(k);
            if (it != cells_.end()) {
                const Cell& cell = it->second;
                for (int c = 0; c < edim_; ++c) {
                    qw[c] = q[c];
                    if (ncells_[c] > 0) {
                        const double shift =
                            std::floor(static_cast<double>(idx[c]) / ncells_[c]) *
                            (cell_[c] * ncells_[c]);
                        qw[c] = q[c] - shift;
                    }
                }
                for (std::size_t j = 0; j < cell.count; ++j) {
                    double acc = 0;
                    for (int c = 0; c < edim_; ++c) {
                        const double d = cell.soa[c * cell.count + j] - qw[c];
                        acc += d * d;
                    }
                    if (acc <= r2 &&
                        std::find(out.begin(), out.end(), cell.owner[j]) == out.end()) {
                        out.push_back(cell.owner[j]);
                        if (out.size() >= max_owners) return;
                    }
                }
            }
            int c = 0;
            for (; c < edim_; ++c) {
                if (idx[c] < hi[c]) {
                    ++idx[c];
                    for (int b = 0; b < c; ++b) idx[b] = lo[b];
                    break;
                }
            }
            if (c == edim_) break;
        }
    }

  private:
    std::uint64_t key_at(const double* p) const {
        std::uint64_t k = 1469598103934665603ull;
        for (int c = 0; c < edim_; ++c) {
            long long cellidx = static_cast<long long>(std::floor(p[c] / cell_[c]));
            if (ncells_[c] > 0) {
                cellidx %= ncells_[c];
                if (cellidx < 0) cellidx += ncells_[c];
            }
            k = (k ^ static_cast<std::uint64_t>(cellidx)) * 1099511628211ull;
        }
        return k;
    }

    struct Cell {
        std::size_t count = 0;
        std::vector<double> soa;
        std::vector<std::size_t> owner;
    };

    int edim_;
    std::vector<double> cell_;
    std::vector<long long> ncells_;
    std::vector<double> points_;
    std::vector<std::size_t> owners_;
    std::unordered_map<std::uint64_t, Cell> cells_;
};

// ---------------------------------------------------------------------------
// Continuous beam (geodesic flow around SN*H)

class ContinuousBeam final : public BeamSystem {
  public:
    ContinuousBeam(std::shared_ptr<const Manifold> model, std::shared_ptr<const Submanifold> H,
                   double tau, double net_spacing, double lambda_hat)
        : model_(std::move(model)), H_(std::move(H)), tau_(tau), lambda_(lambda_hat) {
        net_ = sample_snh(*H_, net_spacing);
        const int cd = model_->coord_dim();
        edim_ = 2 * cd;
        embeds_.reserve(net_.size());
        for (const auto& cp : net_) {
            Vec e(edim_);
            e << cp.rho.x, model_->cotangent_to_tangent(cp.rho.x, cp.rho.xi);
            embeds_.push_back(e);
        }
        periods_ = Vec::Zero(edim_);
        if (const auto* t = dynamic_cast<const FlatTorus*>(model_.get()))
            for (int c = 0; c < cd; ++c) periods_[c] = t->periods()[c];
    }

    int sn_dim() const override { return model_->dim() - 1; }
    int embed_dim() const override { return edim_; }
    bool discrete_time() const override { return false; }
    double tau() const override { return tau_; }
    double lambda_hat() const override { return lambda_; }
    double net_extent() const override {
        if (H_->is_point()) return model_->dim() == 2 ? 2 * M_PI : 4 * M_PI;
        return 2.0 * H_->length();  // two conormal branches
    }
    std::size_t net_size() const override { return net_.size(); }
    const Vec& net_embed(std::size_t i) const override { return embeds_[i]; }
    const ConormalPoint& net_point(std::size_t i) const { return net_[i]; }

    double dist(const Vec& a, const Vec& b) const override {
        double acc = 0;
        for (int c = 0; c < edim_; ++c) {
            double d = a[c] - b[c];
            if (periods_[c] > 0) d -= std::round(d / periods_[c]) * periods_[c];
            acc += d * d;
        }
        return std::sqrt(acc);
    }

    double metric_scale(const Vec& p) const override {
        // Euclid * scale ~ metric length near the slab
        if (dynamic_cast<const HyperbolicHalfPlane*>(model_.get()) != nullptr)
            return 1.0 / p[1];
        return 1.0;
    }

    Vec embed_periods() const { return periods_; }

    int probes_per_tube() const override { return 1 + 2 * (model_->dim() - 1); }

    void probe_path(std::size_t i, int j, double r, const std::vector<double>& tgrid,
                    std::vector<double>& out_aos) const override {
        const ConormalPoint& cp = net_[i];
        const Manifold& m = *model_;
        Vec v0 = m.cotangent_to_tangent(cp.rho.x, cp.rho.xi);
        if (j > 0) {
            // fiber-boundary probe: rotate the direction by +-r toward a
            // vertical frame direction
            const int dir = (j - 1) / 2;
            const int sgn = ((j - 1) % 2 == 0) ? 1 : -1;
            Mat frame(m.coord_dim(), m.dim() - 1);
            int col = 0;
            for (int c = 0; c < m.coord_dim() && col < m.dim() - 1; ++c) {
                Vec e = Vec::Zero(m.coord_dim());
                e[c] = 1.0;
                e = m.project_tangent(cp.rho.x, e);
                e -= m.inner(cp.rho.x, e, v0) * v0;
                for (int b = 0; b < col; ++b)
                    e -= m.inner(cp.rho.x, e, frame.col(b)) * frame.col(b);
                const double ne = m.norm(cp.rho.x, e);
                if (ne < 1e-8) continue;
                frame.col(col++) = e / ne;
            }
            v0 = std::cos(r) * v0 + sgn * std::sin(r) * frame.col(std::min(dir, col - 1));
        }
        out_aos.assign(tgrid.size() * edim_, 0.0);
        const auto* torus = dynamic_cast<const FlatTorus*>(model_.get());
        if (torus != nullptr &&
            std::abs(torus->periods().maxCoeff() - torus->periods().minCoeff()) < 1e-12) {
            // straight-line orbits: use the batched kernel per coordinate
            const int cd = m.coord_dim();
            std::vector<double> soa(tgrid.size() * cd);
            kernels::linear_orbit(cp.rho.x.data(), v0.data(), cd, tgrid.data(), tgrid.size(),
                                  torus->periods()[0], soa.data());
            for (std::size_t s = 0; s < tgrid.size(); ++s)
                for (int c = 0; c < cd; ++c) {
                    out_aos[s * edim_ + c] = soa[c * tgrid.size() + s];
                    out_aos[s * edim_ + cd + c] = v0[c];
                }
            return;
        }
        Vec x = cp.rho.x;
        Vec v = v0;
        double t_cur = 0.0;
        const int cd = m.coord_dim();
        for (std::size_t s = 0; s < tgrid.size(); ++s) {
            double target = tgrid[s];
            const double span = target - t_cur;
            const int nsub = std::max(1, static_cast<int>(std::ceil(std::abs(span) / 5e-3)));
            const double h = span / nsub;
            for (int k = 0; k < nsub; ++k) {
                rk4_geodesic_step(m, x, v, h);
                v /= m.norm(x, v);
            }
            t_cur = target;
            if (!m.in_domain(x)) {
                // orbit left the patch: freeze the position (far from the slab)
                for (std::size_t s2 = s; s2 < tgrid.size(); ++s2)
                    for (int c = 0; c < edim_; ++c)
                        out_aos[s2 * edim_ + c] = 1e6 + static_cast<double>(c);
                return;
            }
            for (int c = 0; c < cd; ++c) {
                out_aos[s * edim_ + c] = x[c];
                out_aos[s * edim_ + cd + c] = v[c];
            }
        }
    }

    void slab(double step, const std::vector<std::size_t>& net_indices,
              std::vector<double>& out_aos, std::vector<std::size_t>& owner) const override {
        out_aos.clear();
        owner.clear();
        const Manifold& m = *model_;
        const int cd = m.coord_dim();
        const int half = std::max(1, static_cast<int>(std::ceil(tau_ / step)));
        for (std::size_t idx : net_indices) {
            const ConormalPoint& cp = net_[idx];
            const Vec v0 = m.cotangent_to_tangent(cp.rho.x, cp.rho.xi);
            for (int side = -1; side <= 1; side += 2) {
                Vec x = cp.rho.x;
                Vec v = v0;
                for (int k = (side < 0 ? 0 : 1); k <= half; ++k) {
                    if (k > 0) {
                        rk4_geodesic_step(m, x, v, side * step);
                        v /= m.norm(x, v);
                        if (!m.in_domain(x)) break;
                    }
                    for (int c = 0; c < cd; ++c) out_aos.push_back(x[c]);
                    for (int c = 0; c < cd; ++c) out_aos.push_back(v[c]);
                    owner.push_back(idx);
                }
            }
        }
    }

    bool near_slab(const Vec& p, double margin) const override {
        const double reach = tau_ + margin;
        if (H_->is_point()) {
            Vec x = p.head(model_->coord_dim());
            return model_->base_distance(x, H_->eval(0)) <= reach;
        }
        const Vec x = p.head(model_->coord_dim());
        if (H_->kind() == "torus_circle" || H_->kind() == "sphere_equator")
            return std::abs(H_->base_offset(x)) <= reach;
        if (H_->kind() == "halfplane_vertical") {
            if (std::abs(std::asinh(x[0] / x[1])) > reach) return false;
            const double u = std::log(x[1] / H_->eval(0)[1]);
            return u > H_->param_lo() - reach - 0.5 && u < H_->param_hi() + reach + 0.5;
        }
        return true;
    }

    Vec random_slab_point(Rng& rng, double radius) const override {
        const Manifold& m = *model_;
        const std::size_t i = rng.uniform_int(static_cast<int>(net_.size()));
        const ConormalPoint& cp = net_[i];
        Vec v = m.cotangent_to_tangent(cp.rho.x, cp.rho.xi);
        // split the budget between a base offset and a fiber rotation
        const double rho_b = radius * rng.uniform();
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        const double db = rho_b * std::cos(ang), df = rho_b * std::sin(ang);
        Vec x = cp.rho.x;
        Vec dir = rng.unit_vector(m.coord_dim());
        dir = m.project_tangent(x, dir);
        if (m.norm(x, dir) > 1e-9) {
            dir /= m.norm(x, dir);
            x += db * dir;
            m.normalize_state(x, nullptr);
        }
        v = m.project_tangent(x, v);
        v /= m.norm(x, v);
        // rotate v by df toward a perpendicular direction
        Vec perp = rng.unit_vector(m.coord_dim());
        perp = m.project_tangent(x, perp);
        perp -= m.inner(x, perp, v) * v;
        if (m.norm(x, perp) > 1e-9) {
            perp /= m.norm(x, perp);
            v = std::cos(df) * v + std::sin(df) * perp;
        }
        const double t = tau_ * (2.0 * rng.uniform() - 1.0);
        const int nsub = std::max(1, static_cast<int>(std::ceil(std::abs(t) / 5e-3)));
        for (int k = 0; k < nsub; ++k) {
            rk4_geodesic_step(m, x, v, t / nsub);
            v /= m.norm(x, v);
        }
        Vec e(edim_);
        e << x, v;
        return e;
    }

    bool tube_contains(std::size_t i, const Vec& p, double tau, double r) const override {
        const Manifold& m = *model_;
        const int cd = m.coord_dim();
        Vec x = p.head(cd);
        Vec v = p.tail(cd);
        const double nv = m.norm(x, v);
        if (nv < 1e-9) return false;
        v /= nv;
        const PhasePoint q{x, m.tangent_to_cotangent(x, v)};
        Tube tube;
        tube.center = net_[i];
        tube.tau = tau;
        tube.r = r;
        return tube_membership(m, tube, q);
    }

    double det_contraction(std::size_t i, double t) const override {
        // |det dphi_t| restricted to T(SN*H): propagate the tangent by the
        // Jacobi fundamental system along the center orbit
        auto it = seg_cache_.find(i);
        if (it == seg_cache_.end() || std::abs(it->second.t_reached) < t) {
            FlowOptions o;
            o.dt = 2e-3;
            seg_cache_[i] = propagate_linearization(*model_, net_[i].rho, t * 1.05 + 0.1, o);
            it = seg_cache_.find(i);
        }
        const auto& seg = it->second;
        if (std::abs(seg.t_reached) < t) return std::numeric_limits<double>::quiet_NaN();
        const auto s0 = seg.states.front();
        Mat T;
        try {
            T = snh_tangent_perp(*H_, net_[i], s0.frame);
        } catch (const GeobeamError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        const auto st = seg.state_at_time(t);
        const Mat M = seg.dflow_perp(st);
        const Mat img = M * T;
        // volume distortion of the (n-1)-dim tangent
        Eigen::JacobiSVD<Mat> svd(img);
        double det = 1.0;
        for (int k = 0; k < svd.singularValues().size(); ++k)
            det *= svd.singularValues()[k];
        return det;
    }

    const Manifold& model() const { return *model_; }
    const Submanifold& H() const { return *H_; }

  private:
    std::shared_ptr<const Manifold> model_;
    std::shared_ptr<const Submanifold> H_;
    double tau_;
    double lambda_;
    int edim_;
    std::vector<ConormalPoint> net_;
    std::vector<Vec> embeds_;
    Vec periods_;
    mutable std::unordered_map<std::size_t, FlowSegment> seg_cache_;
};

// ---------------------------------------------------------------------------
// Cat-map beam: segment along an eigendirection, exact lattice orbits

class CatBeam final : public BeamSystem {
  public:
    CatBeam(std::shared_ptr<const DiscreteHyperbolicSystem> sys, const CatSegmentSpec& spec)
        : sys_(std::move(sys)), spec_(spec) {
        e_ = spec.stable_direction ? sys_->eminus() : sys_->eplus();
        lam_signed_ = spec.stable_direction ? sys_->lambda_minus_signed()
                                            : sys_->lambda_plus_signed();
        eperp_ << -e_.y(), e_.x();
        // snap the anchor to the lattice so its orbit is exact; probe offsets
        // along the eigendirection are carried analytically (they contract,
        // so double precision holds them exactly at every horizon)
        anchor_ = sys_->to_lattice(spec_.base.x(), spec_.base.y());
        spec_.base = sys_->to_unit(anchor_);
        // fine net along the segment at spacing ~1/2048
        const int count = 2049;
        net_s_.reserve(count);
        for (int i = 0; i < count; ++i) net_s_.push_back(spec_.length * i / (count - 1));
        embeds_.reserve(count);
        for (double s : net_s_) {
            const Eigen::Vector2d p = wrap(spec_.base + s * e_);
            Vec v(2);
            v << p.x(), p.y();
            embeds_.push_back(v);
        }
    }

    int sn_dim() const override { return 1; }
    int embed_dim() const override { return 2; }
    bool discrete_time() const override { return true; }
    double tau() const override { return 0.0; }
    double lambda_hat() const override { return std::log(sys_->lambda_plus()); }
    double net_extent() const override { return spec_.length; }
    std::size_t net_size() const override { return embeds_.size(); }
    const Vec& net_embed(std::size_t i) const override { return embeds_[i]; }
    double net_param(std::size_t i) const { return net_s_[i]; }

    double dist(const Vec& a, const Vec& b) const override {
        return DiscreteHyperbolicSystem::torus_distance({a[0], a[1]}, {b[0], b[1]});
    }

    int probes_per_tube() const override { return 3; }

    void probe_path(std::size_t i, int j, double r, const std::vector<double>& tgrid,
                    std::vector<double>& out_aos) const override {
        const double offset = net_s_[i] + ((j == 0) ? 0.0 : (j == 1 ? r : -r));
        out_aos.assign(tgrid.size() * 2, 0.0);
        auto st = anchor_;
        std::int64_t cur = 0;
        double contraction = 1.0;
        for (std::size_t s = 0; s < tgrid.size(); ++s) {
            const auto k = static_cast<std::int64_t>(std::llround(tgrid[s]));
            while (cur < k) {
                st = sys_->step(st);
                contraction *= lam_signed_;
                ++cur;
            }
            // exact image of (anchor + offset e): M^k e = lambda^k e
            const Eigen::Vector2d p =
                wrap(sys_->to_unit(st) + (offset * contraction) * e_);
            out_aos[s * 2] = p.x();
            out_aos[s * 2 + 1] = p.y();
        }
    }

    void slab(double step, const std::vector<std::size_t>& net_indices,
              std::vector<double>& out_aos, std::vector<std::size_t>& owner) const override {
        (void)step;  // the analog set is the segment itself
        out_aos.clear();
        owner.clear();
        for (std::size_t idx : net_indices) {
            out_aos.push_back(embeds_[idx][0]);
            out_aos.push_back(embeds_[idx][1]);
            owner.push_back(idx);
        }
    }

    bool near_slab(const Vec& p, double margin) const override {
        return lateral_distance({p[0], p[1]}) <= margin + 1e-12;
    }

    Vec random_slab_point(Rng& rng, double radius) const override {
        const double s = spec_.length * rng.uniform();
        const double rho = radius * rng.uniform();
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        const Eigen::Vector2d p = wrap(spec_.base + s * e_ + rho * std::cos(ang) * e_ +
                                       rho * std::sin(ang) * eperp_);
        Vec v(2);
        v << p.x(), p.y();
        return v;
    }

    double det_contraction(std::size_t, double t) const override {
        const double lam =
            spec_.stable_direction ? sys_->lambda_minus() : 1.0 / sys_->lambda_plus();
        return std::pow(lam, t);
    }

    bool tube_contains(std::size_t i, const Vec& p, double, double r) const override {
        return dist(p, embeds_[i]) <= r + 1e-12;
    }

    // distance from a torus point to the segment line (min over images)
    double lateral_distance(const Eigen::Vector2d& p) const {
        double best = std::numeric_limits<double>::infinity();
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy) {
                const Eigen::Vector2d d =
                    p + Eigen::Vector2d(dx, dy) - spec_.base;
                const double s = d.dot(e_);
                if (s < -0.05 || s > spec_.length + 0.05) continue;
                best = std::min(best, std::abs(d.dot(eperp_)));
            }
        return best;
    }

    static Eigen::Vector2d wrap(Eigen::Vector2d p) {
        p.x() -= std::floor(p.x());
        p.y() -= std::floor(p.y());
        return p;
    }

  private:
    std::shared_ptr<const DiscreteHyperbolicSystem> sys_;
    CatSegmentSpec spec_;
    Eigen::Vector2d e_, eperp_;
    double lam_signed_ = 0;
    DiscreteHyperbolicSystem::LatticeState anchor_{0, 0};
    std::vector<double> net_s_;
    std::vector<Vec> embeds_;
};

Vec system_periods(const BeamSystem& sys) {
    if (const auto* cb = dynamic_cast<const ContinuousBeam*>(&sys)) return cb->embed_periods();
    if (dynamic_cast<const CatBeam*>(&sys) != nullptr) {
        Vec p(2);
        p << 1.0, 1.0;
        return p;
    }
    return Vec::Zero(sys.embed_dim());
}

std::vector<double> make_tgrid(const BeamSystem& sys, double t_lo, double t_hi, double r,
                               const LoopOptions& opts, double density_mult) {
    std::vector<double> tgrid;
    if (sys.discrete_time()) {
        for (double t = std::ceil(t_lo); t <= t_hi + 1e-9; t += 1.0) tgrid.push_back(t);
        return tgrid;
    }
    const double lam = std::min(sys.lambda_hat(), 1.5);
    double dt = std::min(sys.tau() / opts.probe_step_factor, r / (2.0 * std::exp(lam)));
    dt /= density_mult;
    if ((t_hi - t_lo) / dt > 5e6)
        throw NumericError("classify_looping: probe step underflow at this horizon");
    const int n = static_cast<int>(std::ceil((t_hi - t_lo) / dt));
    tgrid.reserve(n + 1);
    for (int i = 0; i <= n; ++i) tgrid.push_back(t_lo + (t_hi - t_lo) * i / n);
    return tgrid;
}

struct HitRecord {
    double t;
    double dist;
    Vec pos;
};

// probe all tubes in `subset` against the slab built from `targets`
void probe_against(const GoodCover& cover, const std::vector<std::size_t>& subset,
                   const std::vector<std::size_t>& targets, double t0, double T0,
                   double density_mult, const LoopOptions& opts, bool keep_positions,
                   std::vector<std::vector<HitRecord>>& hits,
                   std::vector<double>& nearest) {
    const BeamSystem& sys = *cover.sys;
    const double r = cover.r;
    const double tau = sys.tau();
    const double t_lo = std::max(sys.discrete_time() ? 1.0 : 1e-3, t0 - tau);
    const double t_hi = T0 + tau;
    const auto tgrid = make_tgrid(sys, t_lo, t_hi, r, opts, density_mult);

    std::vector<double> slab_aos;
    std::vector<std::size_t> owner;
    std::vector<std::size_t> target_nets(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) target_nets[i] = cover.centers[targets[i]];
    sys.slab(r / opts.slab_step_factor, target_nets, slab_aos, owner);

    const int edim = sys.embed_dim();
    const double detect = opts.detect_factor * r;
    SpatialHash hash(edim, system_periods(sys), 2.0 * detect * 1.5);
    hash.build(std::move(slab_aos), std::move(owner));

    hits.assign(subset.size(), {});
    nearest.assign(subset.size(), std::numeric_limits<double>::infinity());

    auto work = [&](std::size_t a, std::size_t b) {
        std::vector<double> path;
        for (std::size_t sidx = a; sidx < b; ++sidx) {
            const std::size_t net_idx = cover.centers[subset[sidx]];
            for (int j = 0; j < sys.probes_per_tube(); ++j) {
                sys.probe_path(net_idx, j, r, tgrid, path);
                for (std::size_t s = 0; s < tgrid.size(); ++s) {
                    const double* q = &path[s * edim];
                    Eigen::Map<const Vec> qv(q, edim);
                    if (!sys.near_slab(qv, 3.0 * detect)) continue;
                    const auto res = hash.nearest(q, 2.0 * detect);
                    if (!res.found) continue;
                    const double scale = sys.metric_scale(qv);
                    const double d = std::sqrt(res.dist2) * scale;
                    nearest[sidx] = std::min(nearest[sidx], d);
                    if (d <= detect) {
                        HitRecord h;
                        h.t = tgrid[s];
                        h.dist = d;
                        if (keep_positions) h.pos = qv;
                        hits[sidx].push_back(std::move(h));
                    }
                }
            }
        }
    };
    const int threads = std::max(1, opts.threads);
    if (threads == 1 || subset.size() < 8) {
        work(0, subset.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (subset.size() + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const std::size_t a = t * chunk;
            const std::size_t b = std::min(subset.size(), a + chunk);
            if (a >= b) break;
            pool.emplace_back(work, a, b);
        }
        for (auto& th : pool) th.join();
    }
}

std::vector<ReturnWindow> merge_hits(const std::vector<HitRecord>& hits, double gap) {
    std::vector<ReturnWindow> out;
    std::vector<double> ts;
    ts.reserve(hits.size());
    for (const auto& h : hits) ts.push_back(h.t);
    std::sort(ts.begin(), ts.end());
    for (double t : ts) {
        if (!out.empty() && t - out.back().t_end <= gap) {
            out.back().t_end = t;
        } else {
            out.push_back({t, t});
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Factories

std::shared_ptr<BeamSystem> make_continuous_beam(std::shared_ptr<const Manifold> model,
                                                 std::shared_ptr<const Submanifold> H,
                                                 double tau, double net_spacing,
                                                 double lambda_hat) {
    return std::make_shared<ContinuousBeam>(std::move(model), std::move(H), tau, net_spacing,
                                            lambda_hat);
}

std::shared_ptr<BeamSystem> make_cat_beam(std::shared_ptr<const DiscreteHyperbolicSystem> sys,
                                          const CatSegmentSpec& spec) {
    return std::make_shared<CatBeam>(std::move(sys), spec);
}

// ---------------------------------------------------------------------------
// Good cover

GoodCover build_good_cover(std::shared_ptr<BeamSystem> sys, double tau, double r,
                           const CoverOptions& opts) {
    if (r <= 0) throw DomainError("build_good_cover: r must be positive");
    GoodCover cover;
    cover.sys = sys;
    cover.tau = tau;
    cover.r = r;

    // greedy separated subset of the fine net
    const double sep = opts.separation * r;
    const int edim = sys->embed_dim();
    SpatialHash kept(edim, system_periods(*sys), 2.0 * sep);
    std::vector<double> kept_aos;
    std::vector<std::size_t> kept_owner;
    std::vector<Vec> kept_pts;
    for (std::size_t i = 0; i < sys->net_size(); ++i) {
        const Vec& p = sys->net_embed(i);
        bool ok = true;
        for (const Vec& q : kept_pts)
            if (sys->dist(p, q) < sep) {
                ok = false;
                break;
            }
        if (ok) {
            kept_pts.push_back(p);
            cover.centers.push_back(i);
        }
    }

    // greedy coloring of the 3r-intersection graph (conflict: centers <= 6r)
    const double conflict = 6.0 * r * 1.02;
    cover.color.assign(cover.centers.size(), -1);
    int maxcolor = -1;
    for (std::size_t i = 0; i < cover.centers.size(); ++i) {
        std::vector<bool> used(static_cast<std::size_t>(maxcolor + 2), false);
        for (std::size_t j = 0; j < i; ++j) {
            if (sys->dist(kept_pts[i], kept_pts[j]) <= conflict && cover.color[j] >= 0)
                used[cover.color[j]] = true;
        }
        int c = 0;
        while (c < static_cast<int>(used.size()) && used[c]) ++c;
        cover.color[i] = c;
        maxcolor = std::max(maxcolor, c);
    }
    cover.D = maxcolor + 1;
    if (cover.D > opts.D_max)
        throw InvariantError("build_good_cover: coloring exceeded D_max (r too large or net too coarse)");

    if (opts.verify) {
        Rng rng(opts.seed);
        const int misses = verify_cover_property(cover, opts.mc_samples, rng);
        if (misses > 0)
            throw InvariantError("build_good_cover: cover property failed (" +
                                 std::to_string(misses) + " Monte Carlo misses)");
    }
    return cover;
}

int verify_cover_property(const GoodCover& cover, int samples, Rng& rng) {
    const BeamSystem& sys = *cover.sys;
    const int edim = sys.embed_dim();
    const double r = cover.r;

    // hash of tube-center orbit clouds (the tubes themselves)
    std::vector<double> slab_aos;
    std::vector<std::size_t> owner;
    sys.slab(r / 2.0, cover.centers, slab_aos, owner);
    SpatialHash hash(edim, system_periods(sys), 2.0 * r);
    hash.build(std::move(slab_aos), std::move(owner));

    int misses = 0;
    std::vector<std::size_t> owners;
    for (int s = 0; s < samples; ++s) {
        const Vec p = sys.random_slab_point(rng, 0.5 * r);
        const double scale = std::max(sys.metric_scale(p), 1e-9);
        hash.collect_owners(p.data(), 1.6 * r / scale, 8, owners);
        bool covered = false;
        for (std::size_t o : owners)
            if (sys.tube_contains(o, p, cover.tau, r)) {
                covered = true;
                break;
            }
        if (!covered) ++misses;
    }
    (void)edim;
    return misses;
}

bool verify_coloring(const GoodCover& cover) {
    const BeamSystem& sys = *cover.sys;
    for (std::size_t i = 0; i < cover.centers.size(); ++i)
        for (std::size_t j = i + 1; j < cover.centers.size(); ++j)
            if (cover.color[i] == cover.color[j] &&
                sys.dist(sys.net_embed(cover.centers[i]), sys.net_embed(cover.centers[j])) <=
                    6.0 * cover.r)
                return false;
    return true;
}

// ---------------------------------------------------------------------------
// Looping classification

LoopingReport classify_looping(const GoodCover& cover, double t0, double T0,
                               const LoopOptions& opts) {
    const BeamSystem& sys = *cover.sys;
    if (!(T0 >= t0 && t0 > 0)) throw DomainError("classify_looping: need T0 >= t0 > 0");
    if (!sys.discrete_time() && t0 <= 2.0 * sys.tau() + 2.0 * cover.r)
        throw DomainError("classify_looping: t0 must exceed the tube's own flow extent");

    std::vector<std::size_t> all(cover.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    // classify against the whole SN*H flow-out: targets = entire fine net
    std::vector<std::size_t> all_net(sys.net_size());
    for (std::size_t i = 0; i < all_net.size(); ++i) all_net[i] = i;

    LoopingReport rep;
    rep.t0 = t0;
    rep.T0 = T0;
    rep.detect_radius = opts.detect_factor * cover.r;

    std::vector<std::vector<HitRecord>> hits;
    std::vector<double> nearest;
    {
        // slab over the full net: reuse probe_against with explicit targets
        const double r = cover.r;
        const double tau = sys.tau();
        const double t_lo = std::max(sys.discrete_time() ? 1.0 : 1e-3, t0 - tau);
        const double t_hi = T0 + tau;
        const auto tgrid = make_tgrid(sys, t_lo, t_hi, r, opts, 1.0);

        std::vector<double> slab_aos;
        std::vector<std::size_t> owner;
        sys.slab(r / opts.slab_step_factor, all_net, slab_aos, owner);
        const int edim = sys.embed_dim();
        const double detect = opts.detect_factor * r;
        SpatialHash hash(edim, system_periods(sys), 2.0 * detect * 1.5);
        hash.build(std::move(slab_aos), std::move(owner));

        hits.assign(all.size(), {});
        nearest.assign(all.size(), std::numeric_limits<double>::infinity());
        auto work = [&](std::size_t a, std::size_t b) {
            std::vector<double> path;
            for (std::size_t sidx = a; sidx < b; ++sidx) {
                const std::size_t net_idx = cover.centers[sidx];
                for (int j = 0; j < sys.probes_per_tube(); ++j) {
                    sys.probe_path(net_idx, j, r, tgrid, path);
                    for (std::size_t s = 0; s < tgrid.size(); ++s) {
                        const double* q = &path[s * edim];
                        Eigen::Map<const Vec> qv(q, edim);
                        if (!sys.near_slab(qv, 3.0 * detect)) continue;
                        const auto res = hash.nearest(q, 2.0 * detect);
                        if (!res.found) continue;
                        const double d = std::sqrt(res.dist2) * sys.metric_scale(qv);
                        nearest[sidx] = std::min(nearest[sidx], d);
                        if (d <= detect) hits[sidx].push_back({tgrid[s], d, Vec()});
                    }
                }
            }
        };
        const int threads = std::max(1, opts.threads);
        if (threads == 1 || all.size() < 8) {
            work(0, all.size());
        } else {
            std::vector<std::thread> pool;
            const std::size_t chunk = (all.size() + threads - 1) / threads;
            for (int t = 0; t < threads; ++t) {
                const std::size_t a = t * chunk;
                const std::size_t b = std::min(all.size(), a + chunk);
                if (a >= b) break;
                pool.emplace_back(work, a, b);
            }
            for (auto& th : pool) th.join();
        }
    }

    const double gap = sys.discrete_time() ? 1.5 : std::max(sys.tau() / 2.0, 0.05);
    rep.windows.resize(all.size());
    rep.nearest_return = nearest;
    for (std::size_t i = 0; i < all.size(); ++i) rep.windows[i] = merge_hits(hits[i], gap);
    return rep;
}

std::vector<std::size_t> union_looping_offenders(const GoodCover& cover,
                                                 const std::vector<std::size_t>& subset,
                                                 double t0, double T0, double density_mult,
                                                 const LoopOptions& opts) {
    if (subset.empty()) return {};
    std::vector<std::vector<HitRecord>> hits;
    std::vector<double> nearest;
    probe_against(cover, subset, subset, t0, T0, density_mult, opts, false, hits, nearest);
    std::vector<std::size_t> offenders;
    for (std::size_t i = 0; i < subset.size(); ++i)
        if (!hits[i].empty()) offenders.push_back(subset[i]);
    return offenders;
}

CoverPartition partition_single_window(const GoodCover& cover, const LoopingReport& report,
                                       double t0, double T0, const LoopOptions& opts) {
    CoverPartition part;
    std::vector<std::size_t> good;
    for (std::size_t i = 0; i < cover.size(); ++i) {
        bool loops = false;
        for (const auto& w : report.windows[i])
            if (w.t_end >= t0 - 1e-9 && w.t_begin <= T0 + 1e-9) loops = true;
        if (loops) {
            part.bad.push_back(i);
        } else {
            good.push_back(i);
        }
    }
    // the union can loop tube-to-tube even when no single tube self-loops:
    // re-test the union at double probe density, moving offenders greedily
    while (!good.empty()) {
        ++part.union_verification_passes;
        const auto offenders = union_looping_offenders(cover, good, t0, T0, 2.0, opts);
        if (offenders.empty()) break;
        for (std::size_t o : offenders) {
            part.bad.push_back(o);
            part.moved_by_union_test.push_back(o);
            good.erase(std::remove(good.begin(), good.end(), o), good.end());
        }
    }
    std::sort(part.bad.begin(), part.bad.end());
    if (!good.empty()) part.rungs.push_back({good, t0, T0});
    return part;
}

// ---------------------------------------------------------------------------
// Controlled refinement and the dyadic ladder

RefinementResult controlled_refinement(const GoodCover& cover,
                                       const std::vector<std::size_t>& active,
                                       const std::function<double(double)>& f_decay,
                                       double eps, double t0, double T0,
                                       const LoopOptions& opts) {
    const BeamSystem& sys = *cover.sys;
    RefinementResult out;
    if (active.empty()) {
        out.feasible = true;
        out.t0_eff = t0;
        return out;
    }
    const double r = cover.r;
    const int n1 = sys.sn_dim();  // n-1

    // t0(eps): tail of the decay certificate under the budget
    double t0_eff = t0;
    {
        const double target = eps / 4.0;
        double tail = 0.0;
        const double dt = sys.discrete_time() ? 1.0 : 0.1;
        std::vector<double> fs;
        for (double t = t0; t <= T0 + dt; t += dt) fs.push_back(f_decay(t));
        // suffix integral
        std::vector<double> suffix(fs.size() + 1, 0.0);
        for (std::size_t i = fs.size(); i-- > 0;) suffix[i] = suffix[i + 1] + fs[i] * dt;
        tail = suffix[0];
        std::size_t idx = 0;
        while (idx < fs.size() && suffix[idx] > target) ++idx;
        t0_eff = t0 + idx * dt;
        if (idx == fs.size() && tail > target) {
            out.feasible = false;
            out.diagnostic = "decay certificate tail never meets the budget";
            return out;
        }
    }
    out.t0_eff = t0_eff;

    // landing zones: probe the active family and keep hit positions
    std::vector<std::vector<HitRecord>> hits;
    std::vector<double> nearest;
    probe_against(cover, active, active, t0_eff, T0, 1.0, opts, true, hits, nearest);

    // flatten and cluster by (time window, spatial proximity)
    std::vector<HitRecord> all;
    for (auto& h : hits)
        for (auto& rec : h) all.push_back(std::move(rec));
    std::sort(all.begin(), all.end(),
              [](const HitRecord& a, const HitRecord& b) { return a.t < b.t; });

    const double tgap = sys.discrete_time() ? 1.5 : std::max(sys.tau() / 2.0, 0.05);
    // radii floor: e^{-D Lambda T0} * min R_i, kept strictly positive
    const double floor_radius =
        std::max(1e-6, std::exp(-2.0 * std::min(sys.lambda_hat(), 1.0) * T0)) * r;
    std::vector<RemovalBall> balls;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j + 1 < all.size() && all[j + 1].t - all[j].t <= tgap) ++j;
        // spatial clustering inside the time window [i..j]
        std::vector<bool> used(j - i + 1, false);
        for (std::size_t a = 0; a <= j - i; ++a) {
            if (used[a]) continue;
            Vec center = all[i + a].pos;
            double extent = 0.0;
            double tmin = all[i + a].t;
            bool grew = true;
            std::vector<std::size_t> members{a};
            used[a] = true;
            while (grew) {
                grew = false;
                for (std::size_t b = 0; b <= j - i; ++b) {
                    if (used[b]) continue;
                    if (sys.dist(center, all[i + b].pos) <= extent + 4.0 * r) {
                        members.push_back(b);
                        used[b] = true;
                        grew = true;
                        // recenter: midpoint-ish update
                        double worst = 0.0;
                        for (std::size_t mIdx : members)
                            worst = std::max(worst, sys.dist(center, all[i + mIdx].pos));
                        extent = worst;
                        tmin = std::min(tmin, all[i + b].t);
                    }
                }
            }
            RemovalBall ball;
            ball.center = center;
            // contraction-sized cover of the landing zone
            const double fval = f_decay(tmin);
            const double contraction =
                std::isfinite(fval) ? std::pow(std::max(fval, 0.0), 1.0 / n1) : 1.0;
            ball.radius = std::max({1.25 * extent, 1.25 * contraction * r, floor_radius});
            ball.t_hit = tmin;
            balls.push_back(std::move(ball));
        }
        i = j + 1;
    }

    // budget: sum radius^{n-1} <= eps * sum R_i^{n-1} with R_i = r
    double used_budget = 0.0;
    for (const auto& b : balls) used_budget += std::pow(b.radius, n1);
    const double budget = eps * static_cast<double>(active.size()) * std::pow(r, n1);
    out.removed_budget_used = budget > 0 ? used_budget / budget : 0.0;
    out.balls = std::move(balls);
    if (used_budget > budget) {
        out.feasible = false;
        out.diagnostic = "removal budget infeasible at this T0 (" +
                         format_double(out.removed_budget_used) + "x)";
        return out;
    }
    out.feasible = true;
    return out;
}

LadderResult dyadic_ladder(const GoodCover& cover, const LoopingReport& report, double t0,
                           double T0, const LadderOptions& opts) {
    const BeamSystem& sys = *cover.sys;
    LadderResult out;
    const int m = static_cast<int>(std::floor(std::log2(std::max(1.0, T0 / t0))));
    if (m <= 0) {
        out.partition = partition_single_window(cover, report, t0, T0, opts.loop);
        for (const auto& rg : out.partition.rungs) out.rung_counts.push_back(rg.tubes.size());
        return out;
    }

    // contraction certificate: per-system det decay; refuse if absent
    bool have_cert = false;
    auto f_decay = [&](double t) { return cover.sys->det_contraction(cover.centers[0], t); };
    {
        const double probe = f_decay(std::min(8.0, T0));
        if (std::isfinite(probe) && probe < 0.5) have_cert = true;
    }
    if (!have_cert)
        throw InvariantError(
            "dyadic_ladder: contraction certificate missing or not decaying "
            "(sup|det J_t| does not contract on this system)");

    std::vector<std::size_t> active(cover.size());
    for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;

    for (int l = 0; l <= m && !active.empty(); ++l) {
        const double Tl = T0 * std::pow(2.0, -l);
        if (Tl < t0) break;
        const auto ref = controlled_refinement(cover, active, f_decay, opts.eps0, t0, Tl,
                                               opts.loop);
        if (ref.t0_eff <= 0 || ref.t0_eff > Tl) {
            out.partition.rungs.push_back({{}, t0, Tl});
            out.rung_counts.push_back(0);
            continue;
        }
        // rung candidates: active tubes clear of every removal ball (the
        // budget diagnostic is carried in the refinement result; assignment
        // follows the clearing, per the ladder construction)
        std::vector<std::size_t> rung, rest;
        for (std::size_t idx : active) {
            const Vec& c = sys.net_embed(cover.centers[idx]);
            bool clear = true;
            for (const auto& b : ref.balls)
                if (sys.dist(c, b.center) <= b.radius + 1.6 * cover.r) {
                    clear = false;
                    break;
                }
            (clear ? rung : rest).push_back(idx);
        }
        // certify the rung union directly
        while (!rung.empty()) {
            const auto offenders =
                union_looping_offenders(cover, rung, ref.t0_eff, Tl, 1.0, opts.loop);
            if (offenders.empty()) break;
            for (std::size_t o : offenders) {
                rest.push_back(o);
                rung.erase(std::remove(rung.begin(), rung.end(), o), rung.end());
            }
        }
        out.partition.rungs.push_back({rung, ref.t0_eff, Tl});
        out.rung_counts.push_back(rung.size());
        std::sort(rest.begin(), rest.end());
        active = std::move(rest);
    }
    out.partition.bad = active;

    // fitted geometric ratio over nonzero rungs (first 7 rungs)
    std::vector<double> xs, ys;
    for (std::size_t l = 0; l < out.rung_counts.size() && l <= 6; ++l)
        if (out.rung_counts[l] > 0) {
            xs.push_back(static_cast<double>(l));
            ys.push_back(std::log(static_cast<double>(out.rung_counts[l])));
        }
    if (xs.size() >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            sx += xs[k];
            sy += ys[k];
            sxx += xs[k] * xs[k];
            sxy += xs[k] * ys[k];
        }
        const double n = static_cast<double>(xs.size());
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        out.fitted_ratio = std::exp(slope);
    }
    double chat = 0;
    const int n1 = sys.sn_dim();
    for (std::size_t l = 0; l < out.rung_counts.size(); ++l)
        chat = std::max(chat, static_cast<double>(out.rung_counts[l]) *
                                  std::pow(1.0 / opts.eps0, static_cast<double>(l)) *
                                  std::pow(cover.r, n1));
    out.c_hat = chat;
    return out;
}

// ---------------------------------------------------------------------------
// Gauss-Bonnet fixtures and the recurrence gap mechanism

namespace {

// interior angle at a polygon vertex between unit tangents (incoming reversed)
double interior_angle(const Manifold& m, const Vec& x, const Vec& incoming, const Vec& outgoing) {
    const Vec a = -incoming / m.norm(x, incoming);
    const Vec b = outgoing / m.norm(x, outgoing);
    return std::acos(std::clamp(m.inner(x, a, b), -1.0, 1.0));
}

}  // namespace

GaussBonnetReport spherical_right_triangle_check() {
    RoundSphere s2(2);
    Vec e1(3), e2(3), e3(3);
    e1 << 1, 0, 0;
    e2 << 0, 1, 0;
    e3 << 0, 0, 1;
    const std::vector<Vec> v = {e1, e2, e3};
    GaussBonnetReport rep;
    double sum = 0;
    for (int i = 0; i < 3; ++i) {
        const Vec& cur = v[i];
        const Vec& prev = v[(i + 2) % 3];
        const Vec& next = v[(i + 1) % 3];
        // tangents of the two sides at the vertex via the flow machinery
        const Vec to_next = s2.connecting_direction(cur, next);
        const Vec from_prev = -s2.connecting_direction(cur, prev);
        sum += interior_angle(s2, cur, from_prev, to_next);
    }
    rep.angle_sum = sum;
    rep.defect = sum - M_PI;  // angle excess of the geodesic triangle
    // curvature integral over the octant by 2-d quadrature
    const int nq = 400;
    double integral = 0;
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nq; ++j) {
            const double th = (M_PI / 2) * (i + 0.5) / nq;
            const double ph = (M_PI / 2) * (j + 0.5) / nq;
            Vec x(3);
            x << std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th);
            integral += s2.gauss_curvature(x) * std::sin(th) * (M_PI / 2 / nq) * (M_PI / 2 / nq);
        }
    rep.curvature_integral = integral;
    rep.mismatch = std::abs(rep.defect - rep.curvature_integral);
    return rep;
}

GaussBonnetReport hyperbolic_quadrilateral_check(double c, double r1, double r2) {
    if (!(0 < c && c < r1 && r1 < r2))
        throw DomainError("hyperbolic_quadrilateral_check: need 0 < c < r1 < r2");
    HyperbolicHalfPlane hp;
    auto arc_y = [&](double r, double x) { return std::sqrt(r * r - x * x); };
    // vertices counterclockwise: inner-right, outer-right, outer-left, inner-left
    Vec vir(2), vor_(2), vol_(2), vil(2);
    vir << c, arc_y(r1, c);
    vor_ << c, arc_y(r2, c);
    vol_ << -c, arc_y(r2, c);
    vil << -c, arc_y(r1, c);

    // sides: right vertical (up), outer arc (right->left), left vertical
    // (down), inner arc (left->right). Tangents in the chart; hyperbolic
    // angles equal Euclidean ones in this conformal model.
    auto vertical = [](int sgn) {
        Vec t(2);
        t << 0.0, sgn;
        return t;
    };
    auto arc_tangent = [&](double /*r*/, const Vec& p, int dir) {
        // tangent of circle centered at origin: perpendicular to the radius
        Vec t(2);
        t << -p[1] * dir, p[0] * dir;
        return t;
    };
    GaussBonnetReport rep;
    double sum = 0;
    // inner-right: incoming inner arc (dir -1: left->right means clockwise),
    // outgoing vertical up
    sum += interior_angle(hp, vir, arc_tangent(r1, vir, -1), vertical(+1));
    // outer-right: incoming vertical up, outgoing outer arc right->left (ccw)
    sum += interior_angle(hp, vor_, vertical(+1), arc_tangent(r2, vor_, +1));
    // outer-left: incoming outer arc, outgoing vertical down
    sum += interior_angle(hp, vol_, arc_tangent(r2, vol_, +1), vertical(-1));
    // inner-left: incoming vertical down, outgoing inner arc left->right
    sum += interior_angle(hp, vil, vertical(-1), arc_tangent(r1, vil, -1));
    rep.angle_sum = sum;
    rep.defect = 2.0 * M_PI - sum;

    // area by quadrature of the hyperbolic area form over the region
    const int nq = 2000;
    double area = 0;
    for (int i = 0; i < nq; ++i) {
        const double x = -c + 2.0 * c * (i + 0.5) / nq;
        area += (1.0 / arc_y(r1, x) - 1.0 / arc_y(r2, x)) * (2.0 * c / nq);
    }
    rep.curvature_integral = -(-1.0) * area;  // -int K dA with K = -1
    rep.mismatch = std::abs(rep.defect - rep.curvature_integral);
    return rep;
}

GapReport recurrence_gap_check(const Submanifold& H, double r, double T, double r1) {
    const Manifold& m = H.model();
    if (m.dim() != 2 || (m.curvature_kind() != CurvatureKind::constant_negative &&
                         m.curvature_kind() != CurvatureKind::variable))
        throw InvariantError("recurrence_gap_check: needs a nonpositively curved surface");
    if (!H.is_geodesic())
        throw InvariantError("recurrence_gap_check: H must be a geodesic");
    if (m.curvature_kind() == CurvatureKind::variable) {
        // sample the curvature sign
        Rng rng(7);
        for (int i = 0; i < 32; ++i)
            if (m.gauss_curvature(m.random_base(rng)) > 1e-9)
                throw InvariantError("recurrence_gap_check: positive curvature detected");
    }

    // area(Q_s(T)) of the quadrilateral spanned by two H-normal geodesics
    // launched at parameter distance s, flowed for time T, closed by the
    // connecting geodesic. Independent boundary-integral area; GB identity
    // checked инternally.
    auto quad_area = [&](double s) {
        const double u0 = 0.5 * (H.param_lo() + H.param_hi());
        const double us = u0 + s;
        ConormalPoint a{u0, +1.0, PhasePoint{}};
        ConormalPoint b{us, +1.0, PhasePoint{}};
        // conormal direction on the +x side of the geodesic
        auto conormal_at = [&](double u) {
            const Vec x = H.eval(u);
            Vec t = H.tangent(u);
            t /= m.norm(x, t);
            Vec e(2);
            e << 1, 0;
            Vec nrm = e - m.inner(x, e, t) * t;
            nrm /= m.norm(x, nrm);
            if (nrm[0] < 0) nrm = -nrm;
            return make_phase_point(m, x, nrm);
        };
        a.rho = conormal_at(u0);
        b.rho = conormal_at(us);
        // flow both normals for time T, sampling the paths
        const int steps = std::max(64, static_cast<int>(T / 0.01));
        std::vector<Vec> patha, pathb;
        Vec x1 = a.rho.x, v1 = m.cotangent_to_tangent(a.rho.x, a.rho.xi);
        Vec x2 = b.rho.x, v2 = m.cotangent_to_tangent(b.rho.x, b.rho.xi);
        patha.push_back(x1);
        pathb.push_back(x2);
        for (int k = 0; k < steps; ++k) {
            rk4_geodesic_step(m, x1, v1, T / steps);
            v1 /= m.norm(x1, v1);
            rk4_geodesic_step(m, x2, v2, T / steps);
            v2 /= m.norm(x2, v2);
            patha.push_back(x1);
            pathb.push_back(x2);
        }
        // closing side: connecting geodesic from x1 to x2
        std::vector<Vec> pathc;
        {
            const double d = m.base_distance(x1, x2);
            const int cs = std::max(16, static_cast<int>(d / 0.01));
            Vec xc = x1, vc = m.connecting_direction(x1, x2);
            pathc.push_back(xc);
            for (int k = 0; k < cs; ++k) {
                rk4_geodesic_step(m, xc, vc, d / cs);
                vc /= m.norm(xc, vc);
                pathc.push_back(xc);
            }
        }
        // H-side from xb down to xa (vertical segment)
        std::vector<Vec> pathh;
        {
            const int cs = 32;
            for (int k = 0; k <= cs; ++k) pathh.push_back(H.eval(us + (u0 - us) * k / cs));
        }
        // boundary integral of dx/y around gamma_a -> closing -> gamma_b
        // reversed -> H reversed
        auto line_integral = [&](const std::vector<Vec>& path, bool reversed) {
            double acc = 0;
            for (std::size_t k = 0; k + 1 < path.size(); ++k) {
                const Vec& p = reversed ? path[path.size() - 1 - k] : path[k];
                const Vec& q = reversed ? path[path.size() - 2 - k] : path[k + 1];
                acc += (q[0] - p[0]) / (0.5 * (q[1] + p[1]));
            }
            return acc;
        };
        double area = line_integral(patha, false) + line_integral(pathc, false) +
                      line_integral(pathb, true) + line_integral(pathh, false);
        area = std::abs(area);
        // GB identity: defect of the geodesic quadrilateral equals the area
        const Vec ta_end = v1, tb_end = v2;
        const Vec tc_start = m.connecting_direction(x1, x2);
        const Vec tc_end = -m.connecting_direction(x2, x1);
        double sum = 0;
        sum += interior_angle(m, a.rho.x, -H.tangent(u0), m.cotangent_to_tangent(a.rho.x, a.rho.xi));
        sum += interior_angle(m, x1, ta_end, tc_start);
        sum += interior_angle(m, x2, tc_end, -tb_end);
        sum += interior_angle(m, b.rho.x, Vec(-m.cotangent_to_tangent(b.rho.x, b.rho.xi)),
                              Vec(-H.tangent(us)));
        const double defect = 2.0 * M_PI - sum;
        if (std::abs(defect - area) > 2e-3)
            throw NumericError("recurrence_gap_check: Gauss-Bonnet identity violated (" +
                               format_double(std::abs(defect - area)) + ")");
        return area;
    };

    GapReport rep;
    rep.r = r;
    rep.T = T;
    rep.c4 = 1.0;
    // s*(r): largest s with area(Q_s) <= 2 C r (C = 1): bisection
    auto s_star_for = [&](double rr) {
        double lo = 0.0, hi = std::min(0.5 * (H.param_hi() - H.param_lo()), 0.5);
        if (quad_area(hi) <= 2.0 * rr) return hi;
        for (int it = 0; it < 30; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (quad_area(mid) <= 2.0 * rr) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return lo;
    };
    rep.s_star = s_star_for(r);
    rep.r_grid = {r, r / 10.0};
    for (double rr : rep.r_grid) {
        const double ss = s_star_for(rr);
        rep.s_grid.push_back(ss);
        rep.window_counts.push_back(ss / r1);
    }
    // calibrate c2 at the largest radius, then check the bound on the grid
    rep.c2_hat = std::sqrt(rep.s_star) * std::log(rep.c4 / r);
    bool ok = true;
    for (std::size_t i = 0; i < rep.r_grid.size(); ++i) {
        const double bound = sq(rep.c2_hat) / sq(std::log(rep.c4 / rep.r_grid[i]));
        if (rep.s_grid[i] > bound * 1.0001) ok = false;
    }
    // trend: count shrink at r/10 at least the squared-log trendline (x0.7)
    if (rep.window_counts[0] > 0 && rep.window_counts[1] > 0) {
        const double shrink = rep.window_counts[0] / rep.window_counts[1];
        const double trend = sq(std::log(rep.c4 * 10.0 / r) / std::log(rep.c4 / r));
        if (shrink < 0.7 * trend) ok = false;
    }
    rep.pass = ok;
    return rep;
}

// ---------------------------------------------------------------------------
// persistence

std::string cover_to_json(const GoodCover& cover, const std::string& model_name,
                          const std::string& h_descriptor) {
    nlohmann::json j;
    j["version"] = 1;
    j["model"] = model_name;
    j["submanifold"] = h_descriptor;
    j["tau"] = cover.tau;
    j["r"] = cover.r;
    j["D"] = cover.D;
    std::vector<std::vector<double>> centers;
    for (std::size_t idx : cover.centers) {
        const Vec& e = cover.sys->net_embed(idx);
        centers.emplace_back(e.data(), e.data() + e.size());
    }
    j["centers"] = centers;
    j["coloring"] = cover.color;
    return j.dump(2) + "\n";
}

std::string looping_report_csv(const LoopingReport& rep, const std::string& scenario_hash) {
    CsvBuilder csv("looping report; times in flow units; distances in Sasaki units; scenario=" +
                   scenario_hash);
    csv.header({"tube_id", "window_start", "window_end", "min_return_distance"});
    for (std::size_t i = 0; i < rep.windows.size(); ++i) {
        if (rep.windows[i].empty()) {
            csv.row_start();
            csv.cell(i);
            csv.cell(std::string());
            csv.cell(std::string());
            csv.cell(rep.nearest_return[i]);
            csv.row_end();
        }
        for (const auto& w : rep.windows[i]) {
            csv.row_start();
            csv.cell(i);
            csv.cell(w.t_begin);
            csv.cell(w.t_end);
            csv.cell(rep.nearest_return[i]);
            csv.row_end();
        }
    }
    return csv.str();
}

}  // namespace geobeam
