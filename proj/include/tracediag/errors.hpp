#pragma once

#include <stdexcept>
#include <string>

namespace tracediag {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- capture file / frame parsing ---
class BadMagic : public Error { public: using Error::Error; };
class Truncated : public Error { public: using Error::Error; };
class UnsupportedLinkType : public Error { public: using Error::Error; };
class MalformedOption : public Error { public: using Error::Error; };

// --- flows and features ---
class EmptyFlow : public Error { public: using Error::Error; };
class NoFlowFound : public Error { public: using Error::Error; };
class CatalogMismatch : public Error { public: using Error::Error; };

// --- signature database ---
class DimensionMismatch : public Error { public: using Error::Error; };
class DuplicateId : public Error { public: using Error::Error; };
class InsufficientSamples : public Error { public: using Error::Error; };

// --- preprocessing / selection / training ---
class EmptyDataset : public Error { public: using Error::Error; };
class NotInSubset : public Error { public: using Error::Error; };
class TooFewSamples : public Error { public: using Error::Error; };
class DegenerateLabels : public Error { public: using Error::Error; };

// --- emulation / io ---
class ConfigInvalid : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

} // namespace tracediag
