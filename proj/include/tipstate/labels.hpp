// Surfaces, class labels, and the registered class sets.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "tipstate/common.hpp"

namespace tipstate {

enum class Surface { SiH100, Au111, Cu111, Synthetic };

inline const char* surface_name(Surface s) {
    switch (s) {
        case Surface::SiH100: return "SiH100";
        case Surface::Au111: return "Au111";
        case Surface::Cu111: return "Cu111";
        case Surface::Synthetic: return "Synthetic";
    }
    return "?";
}

inline Surface surface_from_name(const std::string& s) {
    if (s == "SiH100") return Surface::SiH100;
    if (s == "Au111") return Surface::Au111;
    if (s == "Cu111") return Surface::Cu111;
    if (s == "Synthetic") return Surface::Synthetic;
    fail(ErrorCode::BadConfig, "unknown surface '" + s + "'");
}

enum class Desirability { Desirable, Undesirable };

struct ClassLabel {
    std::string name;
    Desirability desirability = Desirability::Undesirable;

    bool operator==(const ClassLabel& o) const { return name == o.name; }
};

// A registered, ordered class set. Class ids are indices into `labels`.
struct ClassSet {
    std::string id;  // "si4" | "si-binary" | "metal6"
    std::vector<ClassLabel> labels;

    int size() const { return static_cast<int>(labels.size()); }

    int index_of(const std::string& name) const {
        for (int i = 0; i < size(); ++i)
            if (labels[i].name == name) return i;
        return -1;
    }

    bool contains(const std::string& name) const { return index_of(name) >= 0; }

    const ClassLabel& at(int i) const {
        require(i >= 0 && i < size(), ErrorCode::LabelOutOfRange,
                "class id " + std::to_string(i) + " outside set " + id);
        return labels[static_cast<std::size_t>(i)];
    }

    bool operator==(const ClassSet& o) const { return id == o.id && labels == o.labels; }
};

// Four resolution classes of H:Si(100); asymmetries and dimers are one class.
inline const ClassSet& si_four_classes() {
    static const ClassSet set{
        "si4",
        {{"AsymmetryDimer", Desirability::Desirable},
         {"Atoms", Desirability::Desirable},
         {"Rows", Desirability::Desirable},
         {"GenericDefect", Desirability::Undesirable}}};
    return set;
}

// The separate yes/no tip-change task for H:Si(100).
inline const ClassSet& si_binary_classes() {
    static const ClassSet set{"si-binary",
                              {{"TipChange", Desirability::Undesirable},
                               {"NoTipChange", Desirability::Desirable}}};
    return set;
}

// Six classes shared by the metal surfaces.
inline const ClassSet& metal_six_classes() {
    static const ClassSet set{
        "metal6",
        {{"Atoms", Desirability::Desirable},
         {"DoubleTip", Desirability::Undesirable},
         {"TipChange", Desirability::Undesirable},
         {"StepEdge", Desirability::Undesirable},
         {"Impurity", Desirability::Undesirable},
         {"Corruption", Desirability::Undesirable}}};
    return set;
}

inline const ClassSet& class_set_by_id(const std::string& id) {
    if (id == "si4") return si_four_classes();
    if (id == "si-binary") return si_binary_classes();
    if (id == "metal6") return metal_six_classes();
    fail(ErrorCode::BadConfig, "unknown class set '" + id + "'");
}

// Labels a sample on `surface` may legally carry.
inline bool label_valid_for_surface(Surface surface, const std::string& label) {
    switch (surface) {
        case Surface::SiH100:
            return si_four_classes().contains(label) || si_binary_classes().contains(label);
        case Surface::Au111:
        case Surface::Cu111:
            return metal_six_classes().contains(label);
        case Surface::Synthetic:
            return si_four_classes().contains(label) || si_binary_classes().contains(label) ||
                   metal_six_classes().contains(label);
    }
    return false;
}

}  // namespace tipstate
