#include "stopcal/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace stopcal {

void jacobi_eigen_sym(const Matrix& sym, std::vector<double>& eigenvalues, Matrix& eigenvectors) {
    if (sym.rows != sym.cols) throw Error("jacobi: matrix not square");
    const std::size_t n = sym.rows;
    Matrix a = sym;
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    double norm = 0.0;
    for (double x : a.data) norm += x * x;
    const double tol = 1e-24 * std::max(norm, 1e-300);

    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
        if (off < tol) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (apq == 0.0) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    eigenvalues.resize(n);
    eigenvectors = Matrix(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        eigenvalues[r] = a(order[r], order[r]);
        for (std::size_t k = 0; k < n; ++k) eigenvectors(r, k) = v(k, order[r]);
    }
}

PcaModel fit_pca(const Matrix& rows, std::size_t d) {
    const std::size_t n = rows.rows, dim = rows.cols;
    if (n < 2) throw Error("pca: need at least 2 rows");
    if (d < 1 || d > std::min(n - 1, dim))
        throw Error("pca: target dimension " + std::to_string(d) + " too large for " +
                    std::to_string(n) + "x" + std::to_string(dim) + " input");

    PcaModel model;
    model.input_dim = dim;
    model.output_dim = d;
    model.mean.assign(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) model.mean[j] += rows(i, j);
    for (double& m : model.mean) m /= static_cast<double>(n);

    Matrix cov(dim, dim);
    std::vector<double> centered(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) centered[j] = rows(i, j) - model.mean[j];
        for (std::size_t p = 0; p < dim; ++p) {
            const double cp = centered[p];
            if (cp == 0.0) continue;
            double* crow = cov.data.data() + p * dim;
            for (std::size_t q = p; q < dim; ++q) crow[q] += cp * centered[q];
        }
    }
    const double scale = 1.0 / static_cast<double>(n - 1);
    for (std::size_t p = 0; p < dim; ++p)
        for (std::size_t q = p; q < dim; ++q) {
            cov(p, q) *= scale;
            cov(q, p) = cov(p, q);
        }

    std::vector<double> evals;
    Matrix evecs;
    jacobi_eigen_sym(cov, evals, evecs);

    model.components = Matrix(d, dim);
    model.explained_variance.resize(d);
    for (std::size_t r = 0; r < d; ++r) {
        model.explained_variance[r] = std::max(0.0, evals[r]);
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t k = 0; k < dim; ++k) {
            double mag = std::abs(evecs(r, k));
            if (mag > best) { best = mag; arg = k; }
        }
        const double sign = evecs(r, arg) < 0.0 ? -1.0 : 1.0;
        for (std::size_t k = 0; k < dim; ++k) model.components(r, k) = sign * evecs(r, k);
    }
    return model;
}

namespace {

template <typename T>
std::vector<double> project_impl(const PcaModel& model, std::span<const T> x) {
    if (x.size() != model.input_dim) throw Error("project: dimension mismatch");
    std::vector<double> out(model.output_dim, 0.0);
    for (std::size_t r = 0; r < model.output_dim; ++r) {
        const double* comp = model.components.data.data() + r * model.input_dim;
        double acc = 0.0;
        for (std::size_t j = 0; j < model.input_dim; ++j)
            acc += comp[j] * (static_cast<double>(x[j]) - model.mean[j]);
        out[r] = acc;
    }
    return out;
}

}  // namespace

std::vector<double> project(const PcaModel& model, std::span<const float> x) {
    return project_impl<float>(model, x);
}

std::vector<double> project(const PcaModel& model, std::span<const double> x) {
    return project_impl<double>(model, x);
}

std::vector<double> smooth_scores(std::span<const double> scores, const SmoothingSpec& spec) {
    if (scores.empty()) throw Error("smooth_scores: empty input");
    if (spec.window < 1) throw Error("smooth_scores: window must be >= 1");
    std::vector<double> out(scores.size());
    for (std::size_t t = 0; t < scores.size(); ++t) {
        const std::size_t lo = t + 1 >= spec.window ? t + 1 - spec.window : 0;
        double acc = 0.0;
        for (std::size_t i = lo; i <= t; ++i) acc += scores[i];
        out[t] = acc / static_cast<double>(t - lo + 1);
    }
    return out;
}

Matrix gather_step_matrix(const TraceSet& set) {
    std::size_t n = 0;
    for (const Trace& t : set.traces) n += t.steps.size();
    Matrix rows(n, set.dimension);
    std::size_t r = 0;
    for (const Trace& t : set.traces) {
        for (const Step& st : t.steps) {
            for (std::size_t j = 0; j < set.dimension; ++j) rows(r, j) = st.embedding[j];
            ++r;
        }
    }
    return rows;
}

namespace {
constexpr char kPcaMagic[4] = {'T', 'P', 'C', 'A'};
constexpr std::uint32_t kPcaVersion = 1;
}  // namespace

void save_pca(const PcaModel& model, const std::filesystem::path& path) {
    std::string out;
    out.append(kPcaMagic, 4);
    put_u32_le(out, kPcaVersion);
    put_u32_le(out, static_cast<std::uint32_t>(model.input_dim));
    put_u32_le(out, static_cast<std::uint32_t>(model.output_dim));
    for (double m : model.mean) put_f32_le(out, static_cast<float>(m));
    for (double c : model.components.data) put_f32_le(out, static_cast<float>(c));
    for (double e : model.explained_variance) put_f32_le(out, static_cast<float>(e));
    write_file(path.string(), out);
}

PcaModel load_pca(const std::filesystem::path& path) {
    const std::string in = read_file(path.string());
    if (in.size() < 16 || std::string_view(in.data(), 4) != std::string_view(kPcaMagic, 4))
        throw Error("bad pca magic: " + path.string());
    if (get_u32_le(in, 4) != kPcaVersion) throw Error("unsupported pca version");
    PcaModel model;
    model.input_dim = get_u32_le(in, 8);
    model.output_dim = get_u32_le(in, 12);
    const std::size_t D = model.input_dim, d = model.output_dim;
    if (in.size() != 16 + (D + d * D + d) * 4) throw Error("pca container size mismatch");
    std::size_t off = 16;
    model.mean.resize(D);
    for (std::size_t j = 0; j < D; ++j, off += 4) model.mean[j] = get_f32_le(in, off);
    model.components = Matrix(d, D);
    for (std::size_t k = 0; k < d * D; ++k, off += 4) model.components.data[k] = get_f32_le(in, off);
    model.explained_variance.resize(d);
    for (std::size_t k = 0; k < d; ++k, off += 4) model.explained_variance[k] = get_f32_le(in, off);
    return model;
}

}  // namespace stopcal
