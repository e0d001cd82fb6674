/*
 * Unit tests for the shared core, host build. Each check prints ok/FAIL;
 * the process exits non-zero on any failure.
 *
 * The ChaCha20 vector is the published RFC 8439 block-function vector,
 * asserted against constants (not against the implementation under
 * test). The checksum check compares the incremental fix against a full
 * pseudo-header style recompute written independently below.
 */
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "../include/modshield_core.h"

static int g_failures;
static struct ms_plan g_plan;

static void check(const char *name, int ok)
{
    printf("%s %s\n", ok ? "ok" : "FAIL", name);
    if (!ok)
        g_failures++;
}

/* xorshift PRNG so test data is reproducible without libc rand details */
static uint32_t g_rng = 0x1234567u;

static uint32_t rnd(void)
{
    g_rng ^= g_rng << 13;
    g_rng ^= g_rng >> 17;
    g_rng ^= g_rng << 5;
    return g_rng;
}

/* ---- independent checksum reference ----------------------------------- */

static uint16_t ref_checksum(const uint8_t *data, size_t len)
{
    uint32_t total = 0;
    size_t i;

    for (i = 0; i + 1 < len; i += 2)
        total += ((uint32_t)data[i] << 8) | data[i + 1];
    if (len & 1)
        total += (uint32_t)data[len - 1] << 8;
    while (total > 0xFFFF)
        total = (total & 0xFFFF) + (total >> 16);
    return (uint16_t)(~total & 0xFFFF);
}

static void test_chacha_vector(void)
{
    /* RFC 8439 2.3.2: key 00..1f, counter 1, nonce 000000090000004a00000000 */
    static const uint8_t expect[64] = {
        0x10, 0xf1, 0xe7, 0xe4, 0xd1, 0x3b, 0x59, 0x15,
        0x50, 0x0f, 0xdd, 0x1f, 0xa3, 0x20, 0x71, 0xc4,
        0xc7, 0xd1, 0xf4, 0xc7, 0x33, 0xc0, 0x68, 0x03,
        0x04, 0x22, 0xaa, 0x9a, 0xc3, 0xd4, 0x6c, 0x4e,
        0xd2, 0x82, 0x64, 0x46, 0x07, 0x9f, 0xaa, 0x09,
        0x14, 0xc2, 0xd7, 0x05, 0xd9, 0x8b, 0x02, 0xa2,
        0xb5, 0x12, 0x9c, 0xd1, 0xde, 0x16, 0x4e, 0xb9,
        0xcb, 0xd0, 0x83, 0xe8, 0xa2, 0x50, 0x3c, 0x4e,
    };
    uint8_t key[32], nonce[12], out[64];
    int i;

    for (i = 0; i < 32; i++)
        key[i] = (uint8_t)i;
    memset(nonce, 0, sizeof(nonce));
    nonce[3] = 0x09;
    nonce[7] = 0x4a;
    ms_chacha20_block(key, 1, nonce, out);
    check("chacha20 RFC 8439 block vector", memcmp(out, expect, 64) == 0);
}

static void test_keystream_involution_and_split(void)
{
    uint8_t key[32], nonce[12];
    uint8_t a[253], b[253];
    int ok_inv = 1, ok_split = 1;
    int trial;
    uint32_t i;

    for (trial = 0; trial < 200; trial++) {
        uint32_t len = rnd() % 254;
        uint32_t cut = len ? rnd() % len : 0;
        uint32_t off = rnd() % 200;

        for (i = 0; i < 32; i++)
            key[i] = (uint8_t)rnd();
        for (i = 0; i < 12; i++)
            nonce[i] = (uint8_t)rnd();
        for (i = 0; i < len; i++)
            a[i] = b[i] = (uint8_t)rnd();

        /* involution: xor twice restores the input */
        ms_xor_keystream(key, nonce, off, a, len);
        ms_xor_keystream(key, nonce, off, a, len);
        if (memcmp(a, b, len) != 0)
            ok_inv = 0;

        /* split-consistency: one call == two calls at the cut point */
        memcpy(a, b, len);
        ms_xor_keystream(key, nonce, off, a, len);
        ms_xor_keystream(key, nonce, off, b, cut);
        ms_xor_keystream(key, nonce, off + cut, b + cut, len - cut);
        if (memcmp(a, b, len) != 0)
            ok_split = 0;
    }
    check("keystream involution (200 random tuples)", ok_inv);
    check("keystream split-consistency at random cut points", ok_split);
}

static void test_nonce_layout(void)
{
    uint8_t n[12];

    ms_build_nonce(1, 0xBEEF, 0x01020304, n);
    check("nonce layout dir|0|tid|seq|0",
          n[0] == 1 && n[1] == 0 && n[2] == 0 && n[3] == 0 &&
          n[4] == 0xBE && n[5] == 0xEF &&
          n[6] == 1 && n[7] == 2 && n[8] == 3 && n[9] == 4 &&
          n[10] == 0 && n[11] == 0);
}

static void test_seq_arith(void)
{
    check("seq_lt basic", ms_seq_lt(1, 2) && !ms_seq_lt(2, 1) &&
                          !ms_seq_lt(5, 5));
    check("seq_lt wraparound", ms_seq_lt(0xFFFFFFF0u, 0x10u) &&
                               !ms_seq_lt(0x10u, 0xFFFFFFF0u));
    check("seq_leq", ms_seq_leq(7, 7) && ms_seq_leq(7, 8) && !ms_seq_leq(8, 7));
}

static void test_incremental_checksum(void)
{
    /* Random "TCP segment", random equal-length rewrites at random (odd
     * and even) offsets; the incrementally fixed checksum must verify
     * against a full recompute every time. */
    uint8_t seg[512];
    int trial, ok = 1;
    uint32_t i;

    for (trial = 0; trial < 500; trial++) {
        uint32_t len = 40 + rnd() % 400;
        uint32_t off = 20 + rnd() % (len - 20);
        uint32_t rlen = 1 + rnd() % (len - off);
        uint16_t csum, fixed, full;
        uint32_t sum_old, sum_new;

        for (i = 0; i < len; i++)
            seg[i] = (uint8_t)rnd();
        seg[16] = seg[17] = 0;
        csum = ref_checksum(seg, len);
        seg[16] = (uint8_t)(csum >> 8);
        seg[17] = (uint8_t)csum;

        sum_old = ms_sum_words(seg + off, rlen, off & 1, rlen);
        for (i = 0; i < rlen; i++)
            seg[off + i] = (uint8_t)rnd();
        sum_new = ms_sum_words(seg + off, rlen, off & 1, rlen);
        fixed = ms_checksum_fix(csum, sum_old, sum_new);

        seg[16] = seg[17] = 0;
        full = ref_checksum(seg, len);
        seg[16] = (uint8_t)(fixed >> 8);
        seg[17] = (uint8_t)fixed;
        /* one's complement has two encodings of zero; compare as sums */
        if (fixed != full && !(full == 0x0000 && fixed == 0xFFFF) &&
            !(full == 0xFFFF && fixed == 0x0000))
            ok = 0;
    }
    check("incremental checksum fix vs full recompute (500 rewrites)", ok);
}

static void test_history_ring(void)
{
    struct ms_flow_state st;
    int i, ok = 1;

    memset(&st, 0, sizeof(st));
    for (i = 0; i < 40; i++)
        ms_hist_remember(&st, (uint32_t)(1000 + i * 10), (uint16_t)i);
    if (st.hist_len != MS_HISTORY_DEPTH)
        ok = 0;
    /* oldest evicted, newest present */
    if (ms_hist_has_start(&st, 1000) || !ms_hist_has_start(&st, 1390))
        ok = 0;
    /* re-remembering an existing start dedups instead of growing */
    ms_hist_remember(&st, 1390, 99);
    if (st.hist_len != MS_HISTORY_DEPTH || !ms_hist_has_start(&st, 1240))
        ok = 0;
    check("history ring: depth cap, eviction order, dedup", ok);
}

static void test_selectors(void)
{
    struct ms_key_sel sel[3];
    /* 10.0.0.2 -> 10.0.0.1 must canonicalize with .1 first */
    uint32_t src = __builtin_bswap32(0x0A000002u);
    uint32_t dst = __builtin_bswap32(0x0A000001u);

    ms_fill_selectors(src, dst, 502, sel);
    check("selector canonical order",
          sel[0].peer_a == dst && sel[0].peer_b == src &&
          sel[0].server_port == 502);
    check("selector wildcard candidates",
          sel[1].peer_a == 0 && sel[1].peer_b == src &&
          sel[2].peer_a == 0 && sel[2].peer_b == dst);
}

static void build_adu(uint8_t *buf, uint16_t tid, uint16_t pid, uint8_t fc,
                      const uint8_t *data, uint16_t dlen)
{
    buf[0] = (uint8_t)(tid >> 8);
    buf[1] = (uint8_t)tid;
    buf[2] = (uint8_t)(pid >> 8);
    buf[3] = (uint8_t)pid;
    buf[4] = (uint8_t)((2 + dlen) >> 8);
    buf[5] = (uint8_t)(2 + dlen);
    buf[6] = 0x11;
    buf[7] = fc;
    memcpy(buf + 8, data, dlen);
}

static void test_split_equals_whole(void)
{
    /* Encrypting an ADU delivered whole must equal encrypting the same
     * ADU delivered as two in-order segments (pending resume path). */
    struct ms_cfg cfg = { MS_DEFAULT_MAGIC_PID, MS_DEFAULT_PORT,
                          MS_DIR_EGRESS, MS_POLICY_PERMISSIVE, MS_MAX_ADUS, 0 };
    struct ms_key_val key;
    struct ms_flow_state st_a, st_b;
    struct ms_counters ctr;
    uint8_t data[20], whole[28], part[28];
    uint32_t seq = 5000;
    int cut, ok = 1;
    uint32_t i;

    memset(&key, 0, sizeof(key));
    for (i = 0; i < 32; i++)
        key.key[i] = (uint8_t)i;
    key.policy = MS_POLICY_PERMISSIVE;
    for (i = 0; i < sizeof(data); i++)
        data[i] = (uint8_t)(0xA0 + i);

    for (cut = 1; cut < 28; cut++) {
        memset(&st_a, 0, sizeof(st_a));
        memset(&st_b, 0, sizeof(st_b));
        memset(&ctr, 0, sizeof(ctr));
        build_adu(whole, 7, 0, 0x10, data, sizeof(data));
        build_adu(part, 7, 0, 0x10, data, sizeof(data));

        if (ms_process_data(&cfg, &st_a, &key, 0, seq, whole, 28, NULL,
                            &g_plan, &ctr) != MS_PASS)
            ok = 0;
        if (cut < MS_MBAP_SIZE) {
            /* header split is a designed drop; skip those cut points */
            continue;
        }
        if (ms_process_data(&cfg, &st_b, &key, 0, seq, part,
                            (uint32_t)cut, NULL, &g_plan, &ctr) != MS_PASS)
            ok = 0;
        if (ms_process_data(&cfg, &st_b, &key, 0, seq + (uint32_t)cut,
                            part + cut, 28 - (uint32_t)cut, NULL,
                            &g_plan, &ctr) != MS_PASS)
            ok = 0;
        if (memcmp(whole, part, 28) != 0)
            ok = 0;
        if (st_a.next_seq != st_b.next_seq)
            ok = 0;
    }
    check("split delivery equals whole delivery at every legal cut", ok);
}

static void test_retransmit_identical(void)
{
    struct ms_cfg cfg = { MS_DEFAULT_MAGIC_PID, MS_DEFAULT_PORT,
                          MS_DIR_EGRESS, MS_POLICY_PERMISSIVE, MS_MAX_ADUS, 0 };
    struct ms_key_val key;
    struct ms_flow_state st;
    struct ms_counters ctr;
    uint8_t data[8], first[16], again[16];
    uint32_t seq = 777;
    int ok = 1;
    uint32_t i;

    memset(&key, 0, sizeof(key));
    for (i = 0; i < 32; i++)
        key.key[i] = (uint8_t)(0x40 + i);
    key.policy = MS_POLICY_PERMISSIVE;
    for (i = 0; i < sizeof(data); i++)
        data[i] = (uint8_t)i;
    memset(&st, 0, sizeof(st));
    memset(&ctr, 0, sizeof(ctr));

    build_adu(first, 3, 0, 0x06, data, sizeof(data));
    build_adu(again, 3, 0, 0x06, data, sizeof(data));
    if (ms_process_data(&cfg, &st, &key, 0, seq, first, 16, NULL,
                        &g_plan, &ctr)
            != MS_PASS)
        ok = 0;
    /* same bytes at the same sequence: history-aligned retransmission */
    if (ms_process_data(&cfg, &st, &key, 0, seq, again, 16, NULL,
                        &g_plan, &ctr)
            != MS_PASS)
        ok = 0;
    if (memcmp(first, again, 16) != 0)
        ok = 0;
    /* ahead-of-window data is dropped, not buffered */
    build_adu(again, 4, 0, 0x06, data, sizeof(data));
    if (ms_process_data(&cfg, &st, &key, 0, seq + 100, again, 16, NULL,
                        &g_plan, &ctr)
            != MS_DROP || ctr.drops_out_of_order != 1)
        ok = 0;
    check("retransmission yields identical ciphertext; ooo drops", ok);
}

static void test_layout(void)
{
    check("layout hash stable for this ABI string",
          ms_layout_hash() == ms_layout_hash() && ms_layout_hash() != 0);
    check("packed struct sizes",
          sizeof(struct ms_key_sel) == 12 &&
          sizeof(struct ms_key_val) == 33 &&
          sizeof(struct ms_flow_key) == 13 &&
          sizeof(struct ms_flow_state) == 124);
}

int main(void)
{
    test_chacha_vector();
    test_keystream_involution_and_split();
    test_nonce_layout();
    test_seq_arith();
    test_incremental_checksum();
    test_history_ring();
    test_selectors();
    test_split_equals_whole();
    test_retransmit_identical();
    test_layout();
    if (g_failures) {
        printf("%d failure(s)\n", g_failures);
        return 1;
    }
    printf("all core tests passed\n");
    return 0;
}
