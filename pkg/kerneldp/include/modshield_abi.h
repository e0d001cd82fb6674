/*
 * Shared ABI between the kernel datapath, the loader and the test harness:
 * pinned map layouts, packed on-wire state structs and the layout hash the
 * loader verifies before touching a map.
 *
 * Keystore map:  key = struct ms_key_sel (12 bytes packed),
 *                value = struct ms_key_val (33 bytes packed).
 * Flowstate map: key = struct ms_flow_key (13 bytes packed),
 *                value = struct ms_flow_state (fixed width).
 *
 * Pinned under the eBPF filesystem as modshield_keys / modshield_flows.
 */
#ifndef MODSHIELD_ABI_H
#define MODSHIELD_ABI_H

#ifdef __bpf__
/* glibc's stdint.h does not survive -target bpf; the widths are fixed. */
typedef unsigned char uint8_t;
typedef unsigned short uint16_t;
typedef unsigned int uint32_t;
typedef unsigned long long uint64_t;
#else
#include <stdint.h>
#endif

#define MS_DEFAULT_MAGIC_PID 0x0E0B
#define MS_DEFAULT_PORT 502
#define MS_MAX_ADUS 8
#define MS_MAX_ADUS_CAP 16   /* hard compile-time cap on the runtime budget */
#define MS_MAX_PDU 253
#define MS_MBAP_SIZE 7
#define MS_HISTORY_DEPTH 16
#define MS_WILDCARD_IP 0u

#define MS_POLICY_STRICT 0
#define MS_POLICY_PERMISSIVE 1

#define MS_DIR_EGRESS 0
#define MS_DIR_INGRESS 1

#define MS_PIN_KEYS "modshield_keys"
#define MS_PIN_FLOWS "modshield_flows"

struct ms_key_sel {
    uint32_t peer_a;      /* canonical (numerically lower) peer, big-endian */
    uint32_t peer_b;      /* big-endian */
    uint16_t server_port; /* host order */
    uint16_t pad;
} __attribute__((packed));

struct ms_key_val {
    uint8_t key[32];
    uint8_t policy;       /* MS_POLICY_* */
} __attribute__((packed));

struct ms_flow_key {
    uint32_t saddr;       /* big-endian, directed (sender first) */
    uint32_t daddr;
    uint16_t sport;       /* host order */
    uint16_t dport;
    uint8_t proto;
} __attribute__((packed));

struct ms_pending {
    uint32_t remaining;    /* ADU bytes still owed, 0 = no pending */
    uint32_t offset;       /* PDU-relative offset of the next byte */
    uint8_t nonce[12];
} __attribute__((packed));

struct ms_hist_entry {
    uint32_t seq;
    uint16_t tid;
} __attribute__((packed));

struct ms_flow_state {
    uint32_t next_seq;
    uint8_t established;
    uint8_t hist_len;
    uint8_t hist_pos;      /* ring write cursor */
    uint8_t pad;
    struct ms_pending pending;
    struct ms_hist_entry hist[MS_HISTORY_DEPTH];
} __attribute__((packed));

/* Value of the per-direction config map (modshield_cfg[direction]). */
struct ms_cfg {
    uint16_t magic_pid;     /* encrypted-marker protocol id, never 0 */
    uint16_t modbus_port;
    uint8_t direction;      /* MS_DIR_EGRESS encrypts, MS_DIR_INGRESS decrypts */
    uint8_t policy_default; /* applied when no key record matches */
    uint8_t max_adus;       /* per-segment ADU budget, <= MS_MAX_ADUS_CAP */
    uint8_t pad;
};

struct ms_counters {
    uint64_t frames_total;
    uint64_t frames_modbus;
    uint64_t adus_encrypted;
    uint64_t adus_decrypted;
    uint64_t drops_out_of_order;
    uint64_t drops_policy;
    uint64_t drops_header_split;
    uint64_t aborts_malformed;
    uint64_t passthrough_non_modbus;
};

/* FNV-1a over the layout description string below; bump on any struct edit.
 * The loader refuses to populate a map whose layout record disagrees. */
#define MS_LAYOUT_DESC \
    "ms1:sel12:val33:fkey13:pend20:hist6x16:state124"

static inline uint32_t ms_layout_hash(void)
{
    const char *s = MS_LAYOUT_DESC;
    uint32_t h = 2166136261u;
    while (*s) {
        h ^= (uint8_t)*s++;
        h *= 16777619u;
    }
    return h;
}

#ifdef __cplusplus
#error "C only"
#endif

_Static_assert(sizeof(struct ms_key_sel) == 12, "keystore key must stay 12 bytes");
_Static_assert(sizeof(struct ms_key_val) == 33, "keystore value must stay 33 bytes");
_Static_assert(sizeof(struct ms_flow_key) == 13, "flow key must stay 13 bytes");
_Static_assert(sizeof(struct ms_pending) == 20, "pending record size");
_Static_assert(sizeof(struct ms_hist_entry) == 6, "history entry size");
_Static_assert(sizeof(struct ms_flow_state) == 8 + 20 + 6 * MS_HISTORY_DEPTH,
               "flow state size");

#endif /* MODSHIELD_ABI_H */
