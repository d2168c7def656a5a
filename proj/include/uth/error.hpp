// Copyright 2026 the uth authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace uth {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid call: shape mismatch, out-of-range parameter, bad configuration.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A file does not parse under its declared format.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t
    offset() const noexcept {
        return offset_;
    }

private:
    std::uint64_t offset_;
};

/// Well-formed input whose content violates a data invariant (NaN payload, dirty padding bits).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Training produced non-finite parameters or loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Request exceeds what an exact routine can compute (e.g. enumeration cap).
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// The triplet sampler could not produce a valid triplet within its retry budget.
class SamplerExhaustedError : public Error {
public:
    using Error::Error;
};

}  // namespace uth
