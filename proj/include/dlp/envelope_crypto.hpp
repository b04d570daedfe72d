#pragma once

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <memory>
#include <string>
#include <string_view>

#include "dlp/errors.hpp"
#include "dlp/keystore.hpp"

// The enterprise envelope wrapped around payloads by the decoy action:
//
//   "DLP1" | key_id (16) | nonce (12) | AES-256-GCM ciphertext | tag (16)
//
// The 32-byte header is authenticated as associated data. Only holders of
// the enterprise key can recover the payload; everything after the header
// is indistinguishable from random bytes.

namespace dlp {

inline constexpr std::string_view kEnvelopeMagic = "DLP1";
inline constexpr size_t kEnvelopeKeyIdLen = 16;
inline constexpr size_t kEnvelopeNonceLen = 12;
inline constexpr size_t kEnvelopeTagLen = 16;
inline constexpr size_t kEnvelopeHeaderLen =
    4 + kEnvelopeKeyIdLen + kEnvelopeNonceLen;
inline constexpr size_t kEnvelopeOverhead = kEnvelopeHeaderLen + kEnvelopeTagLen;

namespace detail {

struct CipherCtxFree {
  void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;

inline std::string aes256gcm_seal(std::string_view key, std::string_view nonce,
                                  std::string_view aad,
                                  std::string_view plaintext,
                                  std::string* tag_out) {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw Error(Errc::io_failure, "EVP_CIPHER_CTX_new failed");
  if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr,
                         reinterpret_cast<const unsigned char*>(key.data()),
                         reinterpret_cast<const unsigned char*>(nonce.data())) != 1)
    throw Error(Errc::io_failure, "GCM encrypt init failed");
  int outlen = 0;
  if (!aad.empty() &&
      EVP_EncryptUpdate(ctx.get(), nullptr, &outlen,
                        reinterpret_cast<const unsigned char*>(aad.data()),
                        static_cast<int>(aad.size())) != 1)
    throw Error(Errc::io_failure, "GCM aad failed");
  std::string ct(plaintext.size(), '\0');
  if (!plaintext.empty() &&
      EVP_EncryptUpdate(ctx.get(), reinterpret_cast<unsigned char*>(ct.data()),
                        &outlen,
                        reinterpret_cast<const unsigned char*>(plaintext.data()),
                        static_cast<int>(plaintext.size())) != 1)
    throw Error(Errc::io_failure, "GCM encrypt failed");
  unsigned char fin[16];
  if (EVP_EncryptFinal_ex(ctx.get(), fin, &outlen) != 1)
    throw Error(Errc::io_failure, "GCM finalize failed");
  tag_out->resize(kEnvelopeTagLen);
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG,
                          static_cast<int>(kEnvelopeTagLen),
                          tag_out->data()) != 1)
    throw Error(Errc::io_failure, "GCM get tag failed");
  return ct;
}

inline bool aes256gcm_open(std::string_view key, std::string_view nonce,
                           std::string_view aad, std::string_view ciphertext,
                           std::string_view tag, std::string* plaintext_out) {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw Error(Errc::io_failure, "EVP_CIPHER_CTX_new failed");
  if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr,
                         reinterpret_cast<const unsigned char*>(key.data()),
                         reinterpret_cast<const unsigned char*>(nonce.data())) != 1)
    throw Error(Errc::io_failure, "GCM decrypt init failed");
  int outlen = 0;
  if (!aad.empty() &&
      EVP_DecryptUpdate(ctx.get(), nullptr, &outlen,
                        reinterpret_cast<const unsigned char*>(aad.data()),
                        static_cast<int>(aad.size())) != 1)
    return false;
  std::string pt(ciphertext.size(), '\0');
  if (!ciphertext.empty() &&
      EVP_DecryptUpdate(ctx.get(), reinterpret_cast<unsigned char*>(pt.data()),
                        &outlen,
                        reinterpret_cast<const unsigned char*>(ciphertext.data()),
                        static_cast<int>(ciphertext.size())) != 1)
    return false;
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG,
                          static_cast<int>(tag.size()),
                          const_cast<char*>(tag.data())) != 1)
    return false;
  unsigned char fin[16];
  if (EVP_DecryptFinal_ex(ctx.get(), fin, &outlen) != 1) return false;
  *plaintext_out = std::move(pt);
  return true;
}

}  // namespace detail

inline bool looks_like_envelope(std::string_view data) {
  return data.size() >= kEnvelopeOverhead &&
         data.substr(0, 4) == kEnvelopeMagic;
}

// Encrypts `body` under the enterprise key. A fresh random nonce makes
// repeated encryptions of the same body distinct.
inline std::string seal_envelope(std::string_view body, std::string_view key_id,
                                 std::string_view key) {
  if (key_id.size() != kEnvelopeKeyIdLen)
    throw Error(Errc::bad_keystore, "envelope key id must be 16 bytes");
  if (key.size() != 32)
    throw Error(Errc::bad_keystore, "envelope key must be 256 bits");
  std::string nonce(kEnvelopeNonceLen, '\0');
  if (RAND_bytes(reinterpret_cast<unsigned char*>(nonce.data()),
                 static_cast<int>(nonce.size())) != 1)
    throw Error(Errc::io_failure, "RAND_bytes failed");

  std::string header;
  header.reserve(kEnvelopeHeaderLen);
  header += kEnvelopeMagic;
  header += key_id;
  header += nonce;

  std::string tag;
  std::string ct = detail::aes256gcm_seal(key, nonce, header, body, &tag);
  return header + ct + tag;
}

enum class OpenStatus { ok, no_key, auth_failure };

struct OpenResult {
  OpenStatus status = OpenStatus::no_key;
  std::string plaintext;  // valid when status == ok
  std::string key_id;     // raw bytes, when the header parsed
};

// Inverse of seal_envelope. no_key: not our envelope format, or the key id
// is absent from the store (the signal that forces a block upstream).
// auth_failure: key present but the payload fails authentication.
inline OpenResult open_envelope(std::string_view data, const KeyStore& ks) {
  OpenResult res;
  if (!looks_like_envelope(data)) return res;  // no_key
  res.key_id = std::string(data.substr(4, kEnvelopeKeyIdLen));
  const std::string* key = ks.find(res.key_id);
  if (!key) return res;  // no_key
  std::string_view header = data.substr(0, kEnvelopeHeaderLen);
  std::string_view nonce = data.substr(4 + kEnvelopeKeyIdLen, kEnvelopeNonceLen);
  std::string_view ct =
      data.substr(kEnvelopeHeaderLen, data.size() - kEnvelopeOverhead);
  std::string_view tag = data.substr(data.size() - kEnvelopeTagLen);
  std::string pt;
  if (!detail::aes256gcm_open(*key, nonce, header, ct, tag, &pt)) {
    res.status = OpenStatus::auth_failure;
    return res;
  }
  res.status = OpenStatus::ok;
  res.plaintext = std::move(pt);
  return res;
}

inline std::string random_bytes(size_t n) {
  std::string out(n, '\0');
  if (n > 0 &&
      RAND_bytes(reinterpret_cast<unsigned char*>(out.data()),
                 static_cast<int>(n)) != 1)
    throw Error(Errc::io_failure, "RAND_bytes failed");
  return out;
}

}  // namespace dlp
