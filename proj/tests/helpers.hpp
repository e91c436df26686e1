// Shared test helpers.
#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "tipstate/common.hpp"

class ErrorCodeIs : public Catch::Matchers::MatcherBase<tipstate::Error> {
public:
    explicit ErrorCodeIs(tipstate::ErrorCode code) : code_(code) {}

    bool match(const tipstate::Error& e) const override { return e.code() == code_; }

    std::string describe() const override {
        return std::string("has error code ") + tipstate::error_code_name(code_);
    }

private:
    tipstate::ErrorCode code_;
};
