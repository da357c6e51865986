#include "tesim/optics.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace tesim::optics {

Polarization polarization_from_string(const std::string& s) {
    if (s == "tm" || s == "TM")
        return Polarization::tm;
    if (s == "te" || s == "TE")
        return Polarization::te;
    throw DataError("unknown polarization '" + s + "' (expected tm or te)");
}

Direction direction_from_string(const std::string& s) {
    if (s == "forward" || s == "a_to_b" || s == "AB")
        return Direction::a_to_b;
    if (s == "reverse" || s == "b_to_a" || s == "BA")
        return Direction::b_to_a;
    throw DataError("unknown direction '" + s + "' (expected forward or reverse)");
}

Segment Segment::waveguide(double length_m) {
    Segment s;
    s.kind = Kind::waveguide;
    s.length = length_m;
    return s;
}

Segment Segment::detector_alpha(double length_m, PolPair alpha_abs_per_m) {
    Segment s;
    s.kind = Kind::detector;
    s.length = length_m;
    s.alpha_abs = alpha_abs_per_m;
    return s;
}

Segment Segment::detector_eta(PolPair eta) {
    Segment s;
    s.kind = Kind::detector;
    s.eta = eta;
    return s;
}

Segment Segment::grating(double reflectivity) {
    Segment s;
    s.kind = Kind::grating;
    s.reflectivity = reflectivity;
    return s;
}

int ChipLayout::detector_count() const {
    int n = 0;
    for (const auto& s : segments)
        if (s.kind == Segment::Kind::detector)
            ++n;
    return n;
}

void ChipLayout::validate() const {
    if (propagation_loss_db_per_cm.tm < 0.0 || propagation_loss_db_per_cm.te < 0.0)
        throw DataError("propagation loss must be non-negative");
    for (const auto& s : segments) {
        switch (s.kind) {
        case Segment::Kind::waveguide:
            if (!(s.length >= 0.0))
                throw DataError("waveguide segment length must be non-negative");
            break;
        case Segment::Kind::detector:
            if (s.eta) {
                for (double e : {s.eta->tm, s.eta->te})
                    if (e < 0.0 || e > 1.0)
                        throw DataError("detector efficiency must lie in [0, 1]");
            } else {
                if (!(s.length > 0.0))
                    throw DataError("detector segment needs a positive length");
                if (s.alpha_abs.tm < 0.0 || s.alpha_abs.te < 0.0)
                    throw DataError("detector absorption coefficient must be non-negative");
            }
            break;
        case Segment::Kind::grating:
            if (s.reflectivity < 0.0 || s.reflectivity > 1.0)
                throw DataError("grating reflectivity must lie in [0, 1]");
            break;
        }
    }
}

namespace {

PolPair polpair_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_object() || !j.contains("tm") || !j.contains("te") || j.size() != 2)
        throw DataError(std::string(what) + " must be an object with keys tm and te");
    return {j.at("tm").get<double>(), j.at("te").get<double>()};
}

void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                         const char* what) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw DataError(std::string(what) + ": unknown key '" + key + "'");
}

} // namespace

ChipLayout ChipLayout::from_json(const nlohmann::json& doc) {
    if (!doc.is_object())
        throw DataError("chip layout must be a JSON object");
    reject_unknown_keys(doc, {"propagation_loss_db_per_cm", "segments"}, "chip layout");
    if (!doc.contains("propagation_loss_db_per_cm") || !doc.contains("segments"))
        throw DataError("chip layout needs propagation_loss_db_per_cm and segments");

    ChipLayout chip;
    chip.propagation_loss_db_per_cm =
        polpair_from_json(doc.at("propagation_loss_db_per_cm"), "propagation_loss_db_per_cm");

    for (const auto& sj : doc.at("segments")) {
        if (!sj.is_object() || !sj.contains("kind"))
            throw DataError("each segment needs a 'kind'");
        std::string kind = sj.at("kind").get<std::string>();
        if (kind == "waveguide") {
            reject_unknown_keys(sj, {"kind", "length_um"}, "waveguide segment");
            chip.segments.push_back(Segment::waveguide(sj.at("length_um").get<double>() * 1e-6));
        } else if (kind == "detector") {
            reject_unknown_keys(sj, {"kind", "length_um", "alpha_abs_per_cm", "eta"},
                                "detector segment");
            if (sj.contains("eta")) {
                chip.segments.push_back(
                    Segment::detector_eta(polpair_from_json(sj.at("eta"), "detector eta")));
                if (sj.contains("length_um"))
                    chip.segments.back().length = sj.at("length_um").get<double>() * 1e-6;
            } else if (sj.contains("alpha_abs_per_cm")) {
                PolPair alpha = polpair_from_json(sj.at("alpha_abs_per_cm"), "alpha_abs_per_cm");
                chip.segments.push_back(Segment::detector_alpha(
                    sj.at("length_um").get<double>() * 1e-6, {alpha.tm * 1e2, alpha.te * 1e2}));
            } else {
                throw DataError("detector segment needs either eta or alpha_abs_per_cm");
            }
        } else if (kind == "grating") {
            reject_unknown_keys(sj, {"kind", "reflectivity"}, "grating segment");
            chip.segments.push_back(Segment::grating(sj.at("reflectivity").get<double>()));
        } else {
            throw DataError("unknown segment kind '" + kind + "'");
        }
    }
    chip.validate();
    return chip;
}

nlohmann::json ChipLayout::to_json() const {
    nlohmann::json doc;
    doc["propagation_loss_db_per_cm"] = {{"tm", propagation_loss_db_per_cm.tm},
                                         {"te", propagation_loss_db_per_cm.te}};
    doc["segments"] = nlohmann::json::array();
    for (const auto& s : segments) {
        nlohmann::json sj;
        switch (s.kind) {
        case Segment::Kind::waveguide:
            sj = {{"kind", "waveguide"}, {"length_um", s.length * 1e6}};
            break;
        case Segment::Kind::detector:
            if (s.eta) {
                sj = {{"kind", "detector"}, {"eta", {{"tm", s.eta->tm}, {"te", s.eta->te}}}};
                if (s.length > 0.0)
                    sj["length_um"] = s.length * 1e6;
            } else {
                sj = {{"kind", "detector"},
                      {"length_um", s.length * 1e6},
                      {"alpha_abs_per_cm",
                       {{"tm", s.alpha_abs.tm * 1e-2}, {"te", s.alpha_abs.te * 1e-2}}}};
            }
            break;
        case Segment::Kind::grating:
            sj = {{"kind", "grating"}, {"reflectivity", s.reflectivity}};
            break;
        }
        doc["segments"].push_back(std::move(sj));
    }
    return doc;
}

double device_absorption(double alpha_abs_per_m, double length_m) {
    if (alpha_abs_per_m < 0.0)
        throw std::invalid_argument("absorption coefficient must be non-negative");
    if (length_m < 0.0)
        throw std::invalid_argument("device length must be non-negative");
    return -std::expm1(-alpha_abs_per_m * length_m);
}

double propagation_transmission(double loss_db_per_cm, double length_m) {
    if (loss_db_per_cm < 0.0)
        throw std::invalid_argument("propagation loss must be non-negative");
    if (length_m < 0.0)
        throw std::invalid_argument("propagation length must be non-negative");
    return std::pow(10.0, -loss_db_per_cm * (length_m * 1e2) / 10.0);
}

double detector_efficiency(const Segment& seg, Polarization pol) {
    if (seg.kind != Segment::Kind::detector)
        throw std::invalid_argument("segment is not a detector");
    if (seg.eta)
        return seg.eta->get(pol);
    return device_absorption(seg.alpha_abs.get(pol), seg.length);
}

EfficiencyReport array_efficiency(const ChipLayout& chip, Direction dir, Polarization pol) {
    chip.validate();
    const double loss_db_per_cm = chip.propagation_loss_db_per_cm.get(pol);

    EfficiencyReport rep;
    rep.per_detector.assign(std::size_t(chip.detector_count()), 0.0);
    rep.combined_lossless = 1.0;

    // layout indices of detectors, in encounter order for this direction
    std::vector<std::size_t> order(chip.segments.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = (dir == Direction::a_to_b) ? i : order.size() - 1 - i;

    double survival = 1.0;
    int detector_layout_index = (dir == Direction::a_to_b) ? 0 : chip.detector_count() - 1;
    for (std::size_t idx : order) {
        const Segment& seg = chip.segments[idx];
        switch (seg.kind) {
        case Segment::Kind::waveguide: {
            double t = propagation_transmission(loss_db_per_cm, seg.length);
            rep.propagation_loss_fraction += survival * (1.0 - t);
            survival *= t;
            break;
        }
        case Segment::Kind::detector: {
            double eta = detector_efficiency(seg, pol);
            rep.per_detector[std::size_t(detector_layout_index)] = survival * eta;
            detector_layout_index += (dir == Direction::a_to_b) ? 1 : -1;
            survival *= (1.0 - eta);
            rep.combined_lossless *= (1.0 - eta);
            break;
        }
        case Segment::Kind::grating: {
            rep.reflected_fraction += survival * seg.reflectivity;
            survival *= (1.0 - seg.reflectivity);
            break;
        }
        }
    }

    rep.transmission_to_far_facet = survival;
    rep.combined_lossless = 1.0 - rep.combined_lossless;
    for (double p : rep.per_detector)
        rep.combined_single_pass += p;
    return rep;
}

double double_pass_efficiency(const ChipLayout& chip, double grating_reflectivity,
                              Direction dir, Polarization pol) {
    if (grating_reflectivity < 0.0 || grating_reflectivity > 1.0)
        throw std::invalid_argument("grating reflectivity must lie in [0, 1]");
    if (chip.segments.empty())
        throw std::invalid_argument("empty chip");
    const Segment& terminal = (dir == Direction::a_to_b) ? chip.segments.back()
                                                         : chip.segments.front();
    if (terminal.kind != Segment::Kind::grating)
        throw std::invalid_argument("double pass needs a terminal grating in the travel direction");

    // Everything up to the terminal grating, traversed out and back.
    ChipLayout inner = chip;
    if (dir == Direction::a_to_b)
        inner.segments.pop_back();
    else
        inner.segments.erase(inner.segments.begin());

    EfficiencyReport out = array_efficiency(inner, dir, pol);
    Direction back = (dir == Direction::a_to_b) ? Direction::b_to_a : Direction::a_to_b;
    EfficiencyReport ret = array_efficiency(inner, back, pol);

    return out.combined_single_pass
           + out.transmission_to_far_facet * grating_reflectivity * ret.combined_single_pass;
}

std::vector<std::pair<double, double>> design_sweep(double alpha_abs_per_m,
                                                    const std::vector<double>& lengths_m) {
    double prev = 0.0;
    for (double l : lengths_m) {
        if (!(l > 0.0))
            throw std::invalid_argument("sweep lengths must be positive");
        if (!(l > prev))
            throw std::invalid_argument("sweep lengths must be strictly increasing");
        prev = l;
    }
    std::vector<std::pair<double, double>> curve;
    curve.reserve(lengths_m.size());
    for (double l : lengths_m)
        curve.emplace_back(l, device_absorption(alpha_abs_per_m, l));
    return curve;
}

} // namespace tesim::optics
