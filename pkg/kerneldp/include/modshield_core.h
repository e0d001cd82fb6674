/*
 * Shared datapath core: everything between "this is a keyed Modbus TCP
 * segment" and "pass/drop/abort with these in-place edits".
 *
 * The same code compiles for the bpf target (included by the TC program,
 * operating on a per-CPU scratch copy of the payload) and for the host
 * (included by the differential test harness). Every loop carries a
 * compile-time bound; there is no allocation and no recursion.
 *
 * Segment processing is transactional: a scan pass validates the whole
 * segment and records planned edits, and only then are the edits applied
 * and the flow state advanced — Drop and Abort never leave a partial
 * rewrite behind.
 */
#ifndef MODSHIELD_CORE_H
#define MODSHIELD_CORE_H

#include "modshield_abi.h"

#ifndef MS_INLINE
#define MS_INLINE static inline __attribute__((always_inline))
#endif

/* Heavier helpers may be built as real calls (own stack frame) on
 * targets with a tight per-frame stack budget; see the TC program. */
#ifndef MS_CALLEE
#define MS_CALLEE MS_INLINE
#endif

/* Loop unrolling hint; the BPF verifier needs bounded, unrolled loops. */
#ifdef __bpf__
#define MS_UNROLL _Pragma("unroll")
#else
#define MS_UNROLL
#endif

#define MS_MIN_MBAP_LENGTH 2
#define MS_MAX_MBAP_LENGTH 254
#define MS_PROTOCOL_ID_MODBUS 0x0000

/* Hard compile-time caps backing the runtime config limits. */
#define MS_PLAN_CAP (MS_MAX_ADUS_CAP + 1)   /* +1 for a pending-ADU resume */
#define MS_KS_BLOCK_CAP 6                   /* ceil((63 + 253) / 64) + 1 */

enum ms_verdict {
    MS_PASS = 0,
    MS_DROP = 1,
    MS_ABORT = 2,
};

/* ---- byte order / field access --------------------------------------- */

MS_INLINE uint16_t ms_be16(const uint8_t *p)
{
    return (uint16_t)((p[0] << 8) | p[1]);
}

MS_INLINE uint32_t ms_be32(const uint8_t *p)
{
    return ((uint32_t)p[0] << 24) | ((uint32_t)p[1] << 16) |
           ((uint32_t)p[2] << 8) | (uint32_t)p[3];
}

MS_INLINE uint32_t ms_le32(const uint8_t *p)
{
    return (uint32_t)p[0] | ((uint32_t)p[1] << 8) |
           ((uint32_t)p[2] << 16) | ((uint32_t)p[3] << 24);
}

/* Load 4 bytes preserving their memory order (network-order addresses
 * stay network-order, matching inet_aton's s_addr representation). */
MS_INLINE uint32_t ms_load_net32(const uint8_t *p)
{
    uint32_t v;

    __builtin_memcpy(&v, p, 4);
    return v;
}

MS_INLINE void ms_put_le32(uint8_t *p, uint32_t v)
{
    p[0] = (uint8_t)v;
    p[1] = (uint8_t)(v >> 8);
    p[2] = (uint8_t)(v >> 16);
    p[3] = (uint8_t)(v >> 24);
}

/* ---- 32-bit TCP sequence arithmetic ---------------------------------- */

MS_INLINE int ms_seq_lt(uint32_t a, uint32_t b)
{
    uint32_t diff = b - a;
    return diff != 0 && diff < 0x80000000u;
}

MS_INLINE int ms_seq_leq(uint32_t a, uint32_t b)
{
    return a == b || ms_seq_lt(a, b);
}

/* ---- ChaCha20 (96-bit nonce, block counter from 0) -------------------- */

MS_INLINE uint32_t ms_rotl32(uint32_t v, int n)
{
    return (v << n) | (v >> (32 - n));
}

#define MS_QR(s, a, b, c, d)                          \
    do {                                              \
        s[a] += s[b]; s[d] = ms_rotl32(s[d] ^ s[a], 16); \
        s[c] += s[d]; s[b] = ms_rotl32(s[b] ^ s[c], 12); \
        s[a] += s[b]; s[d] = ms_rotl32(s[d] ^ s[a], 8);  \
        s[c] += s[d]; s[b] = ms_rotl32(s[b] ^ s[c], 7);  \
    } while (0)

MS_CALLEE void ms_chacha20_block(const uint8_t key[32], uint32_t counter,
                                 const uint8_t nonce[12], uint8_t out[64])
{
    uint32_t init[16];
    uint32_t st[16];
    int i;

    init[0] = 0x61707865u;
    init[1] = 0x3320646Eu;
    init[2] = 0x79622D32u;
    init[3] = 0x6B206574u;
MS_UNROLL
    for (i = 0; i < 8; i++)
        init[4 + i] = ms_le32(key + 4 * i);
    init[12] = counter;
    init[13] = ms_le32(nonce);
    init[14] = ms_le32(nonce + 4);
    init[15] = ms_le32(nonce + 8);

MS_UNROLL
    for (i = 0; i < 16; i++)
        st[i] = init[i];
MS_UNROLL
    for (i = 0; i < 10; i++) {
        MS_QR(st, 0, 4, 8, 12);
        MS_QR(st, 1, 5, 9, 13);
        MS_QR(st, 2, 6, 10, 14);
        MS_QR(st, 3, 7, 11, 15);
        MS_QR(st, 0, 5, 10, 15);
        MS_QR(st, 1, 6, 11, 12);
        MS_QR(st, 2, 7, 8, 13);
        MS_QR(st, 3, 4, 9, 14);
    }
MS_UNROLL
    for (i = 0; i < 16; i++)
        ms_put_le32(out + 4 * i, st[i] + init[i]);
}

/*
 * XOR keystream bytes [offset, offset + len) into buf (encrypt == decrypt).
 * len is at most MS_MAX_PDU so at most MS_KS_BLOCK_CAP blocks are touched.
 */
MS_CALLEE void ms_xor_keystream(const uint8_t key[32], const uint8_t nonce[12],
                                uint32_t offset, uint8_t *buf, uint32_t len)
{
    uint8_t block[64];
    uint32_t block_index = offset / 64;
    uint32_t skip = offset % 64;
    uint32_t done = 0;
    int blk;
    uint32_t i;

    for (blk = 0; blk < MS_KS_BLOCK_CAP; blk++) {
        if (done >= len)
            break;
        ms_chacha20_block(key, block_index, nonce, block);
        for (i = 0; i < 64; i++) {
            if (skip + i >= 64 || done + i >= len)
                break;
            buf[done + i] ^= block[skip + i];
        }
        done += i;
        skip = 0;
        block_index++;
    }
}

/* dir(1) | zeros(3) | tid be16 | adu_start_seq be32 | zeros(2) */
MS_CALLEE void ms_build_nonce(uint8_t dir, uint16_t tid, uint32_t adu_seq,
                              uint8_t out[12])
{
    out[0] = dir;
    out[1] = out[2] = out[3] = 0;
    out[4] = (uint8_t)(tid >> 8);
    out[5] = (uint8_t)tid;
    out[6] = (uint8_t)(adu_seq >> 24);
    out[7] = (uint8_t)(adu_seq >> 16);
    out[8] = (uint8_t)(adu_seq >> 8);
    out[9] = (uint8_t)adu_seq;
    out[10] = out[11] = 0;
}

/* ---- one's-complement checksum arithmetic ----------------------------- */

MS_INLINE uint32_t ms_csum_fold(uint32_t v)
{
    v = (v & 0xFFFF) + (v >> 16);
    v = (v & 0xFFFF) + (v >> 16);
    return v;
}

/*
 * Sum `len` bytes into 16-bit words; `parity` is the byte position of
 * buf[0] within the checksummed stream modulo 2 (even = word high byte).
 * Bounded by the scratch buffer size the caller guarantees.
 */
MS_CALLEE uint32_t ms_sum_words(const uint8_t *buf, uint32_t len, uint32_t parity,
                                uint32_t hard_cap)
{
    uint32_t total = 0;
    uint32_t i;

    for (i = 0; i < hard_cap; i++) {
        if (i >= len)
            break;
        if (((parity + i) & 1) == 0)
            total += (uint32_t)buf[i] << 8;
        else
            total += buf[i];
        total = ms_csum_fold(total);
    }
    return total;
}

/* RFC 1624 eq. 3 applied to whole-region folded sums. */
MS_INLINE uint16_t ms_checksum_fix(uint16_t old_checksum, uint32_t sum_old,
                                   uint32_t sum_new)
{
    uint32_t acc = (uint32_t)(~old_checksum & 0xFFFF) +
                   (~sum_old & 0xFFFF) + (sum_new & 0xFFFF);
    return (uint16_t)(~ms_csum_fold(acc) & 0xFFFF);
}

/* ---- keystore selector construction ----------------------------------- */

/*
 * Lookup candidates in priority order: exact canonical pair, then the
 * single-wildcard records for either peer. Peer addresses stay big-endian
 * in the key; canonical order compares their numeric (host-order) values.
 */
MS_INLINE void ms_fill_selectors(uint32_t src_be, uint32_t dst_be,
                                 uint16_t server_port, struct ms_key_sel sel[3])
{
    uint32_t src = __builtin_bswap32(src_be);
    uint32_t dst = __builtin_bswap32(dst_be);
    int i;

    for (i = 0; i < 3; i++) {
        sel[i].server_port = server_port;
        sel[i].pad = 0;
    }
    sel[0].peer_a = src <= dst ? src_be : dst_be;
    sel[0].peer_b = src <= dst ? dst_be : src_be;
    sel[1].peer_a = MS_WILDCARD_IP;
    sel[1].peer_b = src_be;
    sel[2].peer_a = MS_WILDCARD_IP;
    sel[2].peer_b = dst_be;
}

/* ---- flow state helpers ------------------------------------------------ */

MS_CALLEE void ms_flow_init_syn(struct ms_flow_state *st, uint32_t seq)
{
    st->next_seq = seq + 1;
    st->established = 1;
    st->hist_len = 0;
    st->hist_pos = 0;
    st->pad = 0;
    st->pending.remaining = 0;
    st->pending.offset = 0;
    __builtin_memset(st->pending.nonce, 0, sizeof(st->pending.nonce));
    __builtin_memset(st->hist, 0, sizeof(st->hist));
}

/* Deduplicate by start sequence, then append; oldest entry falls off. */
MS_CALLEE void ms_hist_remember(struct ms_flow_state *st, uint32_t seq,
                                uint16_t tid)
{
    int w = 0;
    int i;

MS_UNROLL
    for (i = 0; i < MS_HISTORY_DEPTH; i++) {
        if (i >= st->hist_len)
            break;
        if (st->hist[i].seq != seq) {
            st->hist[w] = st->hist[i];
            w++;
        }
    }
    if (w == MS_HISTORY_DEPTH) {
MS_UNROLL
        for (i = 1; i < MS_HISTORY_DEPTH; i++)
            st->hist[i - 1] = st->hist[i];
        w = MS_HISTORY_DEPTH - 1;
    }
    st->hist[w].seq = seq;
    st->hist[w].tid = tid;
    st->hist_len = (uint8_t)(w + 1);
}

MS_CALLEE int ms_hist_has_start(const struct ms_flow_state *st, uint32_t seq)
{
    int i;

MS_UNROLL
    for (i = 0; i < MS_HISTORY_DEPTH; i++) {
        if (i >= st->hist_len)
            break;
        if (st->hist[i].seq == seq)
            return 1;
    }
    return 0;
}

/* ---- segment processing ------------------------------------------------ */

struct ms_plan_edit {
    uint32_t pid_pos;    /* payload offset of the protocol id, or MS_NO_PID */
    uint32_t xor_pos;    /* payload offset of the first byte to XOR */
    uint32_t xor_len;    /* may be 0 (marker-only rewrite of a split head) */
    uint32_t stream_off; /* PDU-relative keystream offset for buf[xor_pos] */
    uint8_t nonce[12];
};

#define MS_NO_PID 0xFFFFFFFFu

struct ms_plan {
    struct ms_plan_edit edits[MS_PLAN_CAP];
    struct ms_hist_entry hist_new[MS_PLAN_CAP];
    struct ms_pending new_pending;  /* remaining == 0 means none */
    int n_edits;
    int n_hist;
    uint32_t transformed;
};

MS_INLINE int ms_transform_wanted(const struct ms_cfg *cfg, uint16_t pid)
{
    if (cfg->direction == MS_DIR_EGRESS)
        return pid == MS_PROTOCOL_ID_MODBUS;
    return pid == cfg->magic_pid;
}

MS_INLINE uint16_t ms_new_protocol_id(const struct ms_cfg *cfg)
{
    return cfg->direction == MS_DIR_EGRESS ? cfg->magic_pid
                                           : MS_PROTOCOL_ID_MODBUS;
}

MS_INLINE void ms_count_transform(const struct ms_cfg *cfg,
                                  struct ms_counters *ctr, uint32_t n)
{
    if (cfg->direction == MS_DIR_EGRESS)
        ctr->adus_encrypted += n;
    else
        ctr->adus_decrypted += n;
}

MS_INLINE int ms_reject(struct ms_counters *ctr, uint64_t *counter,
                        int verdict)
{
    (*counter)++;
    (void)ctr;
    return verdict;
}

/*
 * Scan pass for an in-order segment. Fills `plan` without touching the
 * payload or the flow state; returns MS_PASS or the rejecting verdict.
 */
MS_INLINE int ms_scan_in_order(const struct ms_cfg *cfg,
                               const struct ms_flow_state *st,
                               uint8_t policy, uint8_t dir_byte, uint32_t seq,
                               const uint8_t *payload, uint32_t plen,
                               struct ms_plan *plan, struct ms_counters *ctr)
{
    uint32_t pos = 0;
    int adus_seen = 0;
    int have_pending = 0;
    int slot;

    plan->n_edits = 0;
    plan->n_hist = 0;
    plan->transformed = 0;
    plan->new_pending.remaining = 0;
    plan->new_pending.offset = 0;

    if (st->pending.remaining > 0) {
        uint32_t take = st->pending.remaining < plen ? st->pending.remaining
                                                     : plen;
        struct ms_plan_edit *e = &plan->edits[plan->n_edits++];

        e->pid_pos = MS_NO_PID;
        e->xor_pos = 0;
        e->xor_len = take;
        e->stream_off = st->pending.offset;
        __builtin_memcpy(e->nonce, st->pending.nonce, 12);
        if (take < st->pending.remaining) {
            plan->new_pending.remaining = st->pending.remaining - take;
            plan->new_pending.offset = st->pending.offset + take;
            __builtin_memcpy(plan->new_pending.nonce, st->pending.nonce, 12);
            have_pending = 1;
        }
        pos = take;
    }

    for (slot = 0; slot < MS_MAX_ADUS_CAP; slot++) {
        uint16_t tid, pid, length;
        uint32_t total, avail, adu_seq;
        int wanted;

        if (pos >= plen || have_pending)
            break;
        if (plen - pos < MS_MBAP_SIZE)
            return ms_reject(ctr, &ctr->drops_header_split, MS_DROP);
        if (adus_seen >= cfg->max_adus)
            return ms_reject(ctr, &ctr->aborts_malformed, MS_ABORT);

        tid = ms_be16(payload + pos);
        pid = ms_be16(payload + pos + 2);
        length = ms_be16(payload + pos + 4);
        if (length < MS_MIN_MBAP_LENGTH || length > MS_MAX_MBAP_LENGTH)
            return ms_reject(ctr, &ctr->aborts_malformed, MS_ABORT);
        total = (uint32_t)(MS_MBAP_SIZE - 1) + length;
        avail = plen - pos;
        adu_seq = seq + pos;

        wanted = ms_transform_wanted(cfg, pid);
        if (cfg->direction == MS_DIR_INGRESS && policy == MS_POLICY_STRICT &&
            pid == MS_PROTOCOL_ID_MODBUS)
            /* unkeyed/unencrypted Modbus refused before any mutation */
            return ms_reject(ctr, &ctr->drops_policy, MS_DROP);
        if (!wanted) {
            /* wrong or already-rewritten marker for this direction */
            pos += total < avail ? total : avail;
            adus_seen++;
            continue;
        }

        {
            struct ms_plan_edit *e = &plan->edits[plan->n_edits++];

            e->pid_pos = pos + 2;
            e->xor_pos = pos + MS_MBAP_SIZE;
            e->stream_off = 0;
            ms_build_nonce(dir_byte, tid, adu_seq, e->nonce);
            if (avail >= total) {
                e->xor_len = total - MS_MBAP_SIZE;
                pos += total;
            } else {
                /* trailing partial with a complete header */
                e->xor_len = avail - MS_MBAP_SIZE;
                plan->new_pending.remaining = total - avail;
                plan->new_pending.offset = avail - MS_MBAP_SIZE;
                __builtin_memcpy(plan->new_pending.nonce, e->nonce, 12);
                have_pending = 1;
                pos = plen;
            }
            plan->hist_new[plan->n_hist].seq = adu_seq;
            plan->hist_new[plan->n_hist].tid = tid;
            plan->n_hist++;
            plan->transformed++;
        }
        adus_seen++;
    }
    return MS_PASS;
}

/*
 * Scan pass for a history-aligned retransmission: the segment must split
 * into whole ADUs, which are re-transformed with the same nonces so the
 * ciphertext is byte-identical to the first pass. No state updates.
 */
MS_INLINE int ms_scan_retransmit(const struct ms_cfg *cfg,
                                 const struct ms_flow_state *st,
                                 uint8_t dir_byte, uint32_t seq,
                                 const uint8_t *payload, uint32_t plen,
                                 struct ms_plan *plan, struct ms_counters *ctr)
{
    uint32_t pos = 0;
    int slot;

    plan->n_edits = 0;
    plan->n_hist = 0;
    plan->transformed = 0;
    plan->new_pending.remaining = 0;

    if (!ms_hist_has_start(st, seq))
        return ms_reject(ctr, &ctr->drops_out_of_order, MS_DROP);

    for (slot = 0; slot < MS_MAX_ADUS_CAP + 1; slot++) {
        uint16_t tid, pid, length;
        uint32_t total;

        if (pos >= plen)
            break;
        if (plen - pos < MS_MBAP_SIZE)
            /* trailing bytes: not a whole-ADU retransmission */
            return ms_reject(ctr, &ctr->drops_out_of_order, MS_DROP);
        tid = ms_be16(payload + pos);
        pid = ms_be16(payload + pos + 2);
        length = ms_be16(payload + pos + 4);
        if (length < MS_MIN_MBAP_LENGTH || length > MS_MAX_MBAP_LENGTH)
            return ms_reject(ctr, &ctr->aborts_malformed, MS_ABORT);
        total = (uint32_t)(MS_MBAP_SIZE - 1) + length;
        if (plen - pos < total)
            return ms_reject(ctr, &ctr->drops_out_of_order, MS_DROP);
        /* budget applies only to complete ADUs, after the trailing checks */
        if (slot >= cfg->max_adus)
            return ms_reject(ctr, &ctr->aborts_malformed, MS_ABORT);

        if (ms_transform_wanted(cfg, pid)) {
            struct ms_plan_edit *e = &plan->edits[plan->n_edits++];

            e->pid_pos = pos + 2;
            e->xor_pos = pos + MS_MBAP_SIZE;
            e->xor_len = total - MS_MBAP_SIZE;
            e->stream_off = 0;
            ms_build_nonce(dir_byte, tid, seq + pos, e->nonce);
            plan->transformed++;
        }
        pos += total;
    }
    return MS_PASS;
}

/* Commit pass: apply the planned edits to the payload buffer. */
MS_CALLEE void ms_apply_plan(const struct ms_cfg *cfg, const uint8_t key[32],
                             const struct ms_plan *plan, uint8_t *payload)
{
    uint16_t new_pid = ms_new_protocol_id(cfg);
    int i;

    for (i = 0; i < MS_PLAN_CAP; i++) {
        const struct ms_plan_edit *e = &plan->edits[i];

        if (i >= plan->n_edits)
            break;
        if (e->pid_pos != MS_NO_PID) {
            payload[e->pid_pos] = (uint8_t)(new_pid >> 8);
            payload[e->pid_pos + 1] = (uint8_t)new_pid;
        }
        if (e->xor_len > 0)
            ms_xor_keystream(key, e->nonce, e->stream_off,
                             payload + e->xor_pos, e->xor_len);
    }
}

/*
 * Commit pass that also maintains the TCP checksum with a per-region
 * RFC 1624 update, mirroring in-place rewrites on a live packet. The
 * region parity is relative to the TCP header start; the payload begins
 * at even parity because the TCP data offset is a multiple of four.
 */
MS_INLINE void ms_apply_plan_csum(const struct ms_cfg *cfg,
                                  const uint8_t key[32],
                                  const struct ms_plan *plan, uint8_t *payload,
                                  uint16_t *tcp_checksum)
{
    uint16_t new_pid = ms_new_protocol_id(cfg);
    uint32_t sum_old, sum_new;
    int i;

    for (i = 0; i < MS_PLAN_CAP; i++) {
        const struct ms_plan_edit *e = &plan->edits[i];

        if (i >= plan->n_edits)
            break;
        if (e->pid_pos != MS_NO_PID) {
            sum_old = ms_sum_words(payload + e->pid_pos, 2, e->pid_pos & 1, 2);
            payload[e->pid_pos] = (uint8_t)(new_pid >> 8);
            payload[e->pid_pos + 1] = (uint8_t)new_pid;
            sum_new = ms_sum_words(payload + e->pid_pos, 2, e->pid_pos & 1, 2);
            *tcp_checksum = ms_checksum_fix(*tcp_checksum, sum_old, sum_new);
        }
        if (e->xor_len > 0) {
            sum_old = ms_sum_words(payload + e->xor_pos, e->xor_len,
                                   e->xor_pos & 1, MS_MAX_PDU + 1);
            ms_xor_keystream(key, e->nonce, e->stream_off,
                             payload + e->xor_pos, e->xor_len);
            sum_new = ms_sum_words(payload + e->xor_pos, e->xor_len,
                                   e->xor_pos & 1, MS_MAX_PDU + 1);
            *tcp_checksum = ms_checksum_fix(*tcp_checksum, sum_old, sum_new);
        }
    }
}

/*
 * Process one keyed, non-control Modbus segment. Mutates `payload` and
 * `st` only when the verdict is MS_PASS. `dir_byte` is the nonce
 * direction (0 toward the server, 1 toward the client), independent of
 * the engine's encrypt/decrypt direction.
 *
 * When `tcp_checksum` is non-NULL the stored TCP checksum is maintained
 * per rewritten region; pass NULL when the caller repairs the checksum
 * itself (the kernel program uses bpf_l4_csum_replace).
 *
 * `plan` is caller-provided scratch memory: it is too large for the BPF
 * stack, so the kernel program keeps it in a per-CPU array map.
 */
MS_INLINE int ms_process_data(const struct ms_cfg *cfg,
                              struct ms_flow_state *st,
                              const struct ms_key_val *keyrec,
                              uint8_t dir_byte, uint32_t seq,
                              uint8_t *payload, uint32_t plen,
                              uint16_t *tcp_checksum,
                              struct ms_plan *plan_scratch,
                              struct ms_counters *ctr)
{
    int verdict;
    int retransmit = 0;
    int i;

    if (st->established && seq != st->next_seq) {
        if (ms_seq_lt(st->next_seq, seq))
            return ms_reject(ctr, &ctr->drops_out_of_order, MS_DROP);
        if (ms_seq_leq(seq + plen, st->next_seq))
            retransmit = 1;
        else
            /* partial overlap with new data: cannot resume cleanly */
            return ms_reject(ctr, &ctr->drops_out_of_order, MS_DROP);
    }

    if (retransmit)
        verdict = ms_scan_retransmit(cfg, st, dir_byte, seq, payload, plen,
                                     plan_scratch, ctr);
    else
        verdict = ms_scan_in_order(cfg, st, keyrec->policy, dir_byte, seq,
                                   payload, plen, plan_scratch, ctr);
    if (verdict != MS_PASS)
        return verdict;

    if (tcp_checksum)
        ms_apply_plan_csum(cfg, keyrec->key, plan_scratch, payload,
                           tcp_checksum);
    else
        ms_apply_plan(cfg, keyrec->key, plan_scratch, payload);
    if (!retransmit) {
        st->next_seq = seq + plen;
        st->established = 1;
        st->pending = plan_scratch->new_pending;
        for (i = 0; i < MS_PLAN_CAP; i++) {
            if (i >= plan_scratch->n_hist)
                break;
            ms_hist_remember(st, plan_scratch->hist_new[i].seq,
                             plan_scratch->hist_new[i].tid);
        }
    }
    ms_count_transform(cfg, ctr, plan_scratch->transformed);
    ctr->frames_modbus++;
    return MS_PASS;
}

#endif /* MODSHIELD_CORE_H */
