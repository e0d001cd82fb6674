/*
 * TC clsact datapath: transparent Modbus TCP PDU encryption at egress and
 * decryption at ingress, sharing its per-frame logic with the host test
 * harness via modshield_core.h.
 *
 * Attach in direct-action mode (the program is both classifier and
 * action): see loader/attach.sh. Maps are pinned under the global tc
 * namespace so loader/mapctl can populate the keystore and config before
 * traffic flows.
 *
 * The program copies the TCP payload into a per-CPU scratch buffer,
 * runs the shared core on it, writes the rewritten bytes back with
 * bpf_skb_store_bytes and repairs the TCP checksum from the folded
 * payload sums (payload starts at even parity: the TCP data offset is a
 * multiple of four).
 */
#include "bpf_compat.h"

#define MS_INLINE static inline __attribute__((always_inline))
/* bpf-to-bpf calls keep the cipher's buffers out of the caller's frame */
#define MS_CALLEE static __attribute__((noinline))
#include "../include/modshield_core.h"

#define MS_SCRATCH_SIZE 2048

#define ETH_HLEN 14
#define ETHERTYPE_IPV4 0x0800
#define IPPROTO_TCP_N 6

#define TCP_FLAG_FIN 0x01
#define TCP_FLAG_SYN 0x02
#define TCP_FLAG_RST 0x04

#define TC_ACT_OK 0
#define TC_ACT_SHOT 2

struct ms_scratch {
    uint8_t buf[MS_SCRATCH_SIZE];
    struct ms_plan plan;          /* too large for the 512-byte BPF stack */
    struct ms_flow_state fresh;   /* staging area for new flow entries */
};

struct bpf_elf_map SEC("maps") modshield_keys = {
    .type = BPF_MAP_TYPE_HASH,
    .size_key = sizeof(struct ms_key_sel),
    .size_value = sizeof(struct ms_key_val),
    .max_elem = 1024,
    .pinning = PIN_GLOBAL_NS,
};

struct bpf_elf_map SEC("maps") modshield_flows = {
    .type = BPF_MAP_TYPE_HASH,
    .size_key = sizeof(struct ms_flow_key),
    .size_value = sizeof(struct ms_flow_state),
    .max_elem = 4096,
    .pinning = PIN_GLOBAL_NS,
};

/* One entry per direction (MS_DIR_EGRESS / MS_DIR_INGRESS). */
struct bpf_elf_map SEC("maps") modshield_cfg = {
    .type = BPF_MAP_TYPE_ARRAY,
    .size_key = sizeof(__u32),
    .size_value = sizeof(struct ms_cfg),
    .max_elem = 2,
    .pinning = PIN_GLOBAL_NS,
};

struct bpf_elf_map SEC("maps") modshield_counters = {
    .type = BPF_MAP_TYPE_PERCPU_ARRAY,
    .size_key = sizeof(__u32),
    .size_value = sizeof(struct ms_counters),
    .max_elem = 2,
    .pinning = PIN_GLOBAL_NS,
};

struct bpf_elf_map SEC("maps") modshield_scratch = {
    .type = BPF_MAP_TYPE_PERCPU_ARRAY,
    .size_key = sizeof(__u32),
    .size_value = sizeof(struct ms_scratch),
    .max_elem = 1,
};

MS_INLINE const struct ms_cfg *ms_get_cfg(__u32 direction,
                                          struct ms_cfg *fallback)
{
    const struct ms_cfg *cfg = bpf_map_lookup_elem(&modshield_cfg, &direction);

    if (cfg && cfg->magic_pid != 0 && cfg->max_adus >= 1 &&
        cfg->max_adus <= MS_MAX_ADUS_CAP)
        return cfg;
    fallback->magic_pid = MS_DEFAULT_MAGIC_PID;
    fallback->modbus_port = MS_DEFAULT_PORT;
    fallback->direction = (uint8_t)direction;
    fallback->policy_default = MS_POLICY_PERMISSIVE;
    fallback->max_adus = MS_MAX_ADUS;
    fallback->pad = 0;
    return fallback;
}

MS_INLINE const struct ms_key_val *ms_lookup_key(__u32 saddr_be, __u32 daddr_be,
                                                 __u16 server_port)
{
    struct ms_key_sel sel[3];
    const struct ms_key_val *rec;
    int i;

    ms_fill_selectors(saddr_be, daddr_be, server_port, sel);
MS_UNROLL
    for (i = 0; i < 3; i++) {
        rec = bpf_map_lookup_elem(&modshield_keys, &sel[i]);
        if (rec)
            return rec;
    }
    return (const struct ms_key_val *)0;
}

MS_INLINE int ms_tc(struct __sk_buff *skb, __u32 direction)
{
    struct ms_cfg cfg_fallback;
    const struct ms_cfg *cfg = ms_get_cfg(direction, &cfg_fallback);
    struct ms_counters *ctr;
    struct ms_scratch *scr;
    const struct ms_key_val *keyrec;
    struct ms_flow_state *st;
    struct ms_flow_key fkey;
    __u32 zero = 0;
    __u8 eth[ETH_HLEN];
    __u8 iph[20];
    __u8 tcph[20];
    __u32 ihl, l4_off, doff, payload_off, plen, ip_total, seq;
    __u16 sport, dport;
    __u8 flags, dir_byte;
    __u32 sum_old, sum_new;
    int verdict;

    ctr = bpf_map_lookup_elem(&modshield_counters, &direction);
    scr = bpf_map_lookup_elem(&modshield_scratch, &zero);
    if (!ctr || !scr)
        return TC_ACT_OK;
    ctr->frames_total++;

    /* Non-IPv4/TCP is pass-through; IPv4/TCP with lying lengths aborts. */
    if (bpf_skb_load_bytes(skb, 0, eth, ETH_HLEN) < 0 ||
        ms_be16(eth + 12) != ETHERTYPE_IPV4) {
        ctr->passthrough_non_modbus++;
        return TC_ACT_OK;
    }
    if (bpf_skb_load_bytes(skb, ETH_HLEN, iph, sizeof(iph)) < 0) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }
    if ((iph[0] >> 4) != 4 || iph[9] != IPPROTO_TCP_N) {
        ctr->passthrough_non_modbus++;
        return TC_ACT_OK;
    }

    ihl = (iph[0] & 0x0F) * 4;
    ip_total = ms_be16(iph + 2);
    if (ihl < 20 || ETH_HLEN + ip_total > skb->len) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }
    l4_off = ETH_HLEN + ihl;
    if (bpf_skb_load_bytes(skb, l4_off, tcph, sizeof(tcph)) < 0) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }
    sport = ms_be16(tcph);
    dport = ms_be16(tcph + 2);
    seq = ms_be32(tcph + 4);
    doff = (tcph[12] >> 4) * 4;
    flags = tcph[13];
    payload_off = l4_off + doff;
    if (doff < 20 || payload_off > ETH_HLEN + ip_total) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }
    plen = ETH_HLEN + ip_total - payload_off;

    if (sport != cfg->modbus_port && dport != cfg->modbus_port) {
        ctr->passthrough_non_modbus++;
        return TC_ACT_OK;
    }

    keyrec = ms_lookup_key(ms_load_net32(iph + 12), ms_load_net32(iph + 16),
                           cfg->modbus_port);
    if (!keyrec) {
        if (cfg->policy_default == MS_POLICY_STRICT) {
            ctr->drops_policy++;
            return TC_ACT_SHOT;
        }
        ctr->frames_modbus++;
        return TC_ACT_OK;
    }

    fkey.saddr = ms_load_net32(iph + 12);
    fkey.daddr = ms_load_net32(iph + 16);
    fkey.sport = sport;
    fkey.dport = dport;
    fkey.proto = IPPROTO_TCP_N;

    if ((flags & (TCP_FLAG_SYN | TCP_FLAG_FIN | TCP_FLAG_RST)) || plen == 0) {
        if (flags & TCP_FLAG_SYN) {
            ms_flow_init_syn(&scr->fresh, seq);
            bpf_map_update_elem(&modshield_flows, &fkey, &scr->fresh, BPF_ANY);
        } else if (flags & (TCP_FLAG_FIN | TCP_FLAG_RST)) {
            bpf_map_delete_elem(&modshield_flows, &fkey);
        }
        ctr->frames_modbus++;
        return TC_ACT_OK;
    }

    st = bpf_map_lookup_elem(&modshield_flows, &fkey);
    if (!st) {
        __builtin_memset(&scr->fresh, 0, sizeof(scr->fresh));
        bpf_map_update_elem(&modshield_flows, &fkey, &scr->fresh, BPF_NOEXIST);
        st = bpf_map_lookup_elem(&modshield_flows, &fkey);
        if (!st) {
            ctr->aborts_malformed++;
            return TC_ACT_SHOT;
        }
    }

    if (plen > MS_SCRATCH_SIZE) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }
    if (bpf_skb_load_bytes(skb, payload_off, scr->buf, plen) < 0) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }

    dir_byte = dport == cfg->modbus_port ? 0 : 1;
    sum_old = ms_sum_words(scr->buf, plen, 0, MS_SCRATCH_SIZE);

    verdict = ms_process_data(cfg, st, keyrec, dir_byte, seq, scr->buf, plen,
                              (uint16_t *)0, &scr->plan, ctr);
    if (verdict != MS_PASS)
        return TC_ACT_SHOT;

    sum_new = ms_sum_words(scr->buf, plen, 0, MS_SCRATCH_SIZE);
    if (bpf_skb_store_bytes(skb, payload_off, scr->buf, plen, 0) < 0) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }
    if (sum_old != sum_new &&
        bpf_l4_csum_replace(skb, l4_off + 16, sum_old, sum_new, 2) < 0) {
        ctr->aborts_malformed++;
        return TC_ACT_SHOT;
    }
    return TC_ACT_OK;
}

SEC("classifier/modshield_egress")
int modshield_egress(struct __sk_buff *skb)
{
    return ms_tc(skb, MS_DIR_EGRESS);
}

SEC("classifier/modshield_ingress")
int modshield_ingress(struct __sk_buff *skb)
{
    return ms_tc(skb, MS_DIR_INGRESS);
}

char _license[] SEC("license") = "GPL";
__u32 _version SEC("version") = 1;
