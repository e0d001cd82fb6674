/*
 * Host-build differential harness: replays a pcap through the same core
 * logic the TC program runs, with plain arrays standing in for the
 * kernel maps. Mirrors the reference CLI's seal/open commands so output
 * pcaps and the printed counters line can be compared byte for byte.
 *
 *   msdp seal --pcap-in a.pcap --pcap-out b.pcap --keys keys.txt
 *   msdp open --pcap-in b.pcap --pcap-out c.pcap --keys keys.txt
 *
 * Exit codes: 0 success, 1 operational failure, 2 usage error.
 */
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "../include/modshield_core.h"
#include "../loader/keyfile.h"

#define ETH_HLEN 14
#define ETHERTYPE_IPV4 0x0800
#define IPPROTO_TCP_N 6

#define TCP_FLAG_FIN 0x01
#define TCP_FLAG_SYN 0x02
#define TCP_FLAG_RST 0x04

#define MAX_KEYS 64
#define MAX_FLOWS 1024
#define MAX_PACKETS 200000

/* ---- userspace stand-ins for the kernel maps -------------------------- */

static struct ms_key_entry g_keys[MAX_KEYS];
static int g_nkeys;

struct flow_slot {
    struct ms_flow_key key;
    struct ms_flow_state state;
    int used;
};

static struct flow_slot g_flows[MAX_FLOWS];

static const struct ms_key_val *keystore_lookup(uint32_t src_be, uint32_t dst_be,
                                                uint16_t port)
{
    struct ms_key_sel sel[3];
    int i, j;

    ms_fill_selectors(src_be, dst_be, port, sel);
    for (i = 0; i < 3; i++) {
        for (j = 0; j < g_nkeys; j++) {
            if (memcmp(&g_keys[j].sel, &sel[i], sizeof(sel[i])) == 0)
                return &g_keys[j].val;
        }
    }
    return NULL;
}

static struct ms_flow_state *flow_get_or_create(const struct ms_flow_key *key)
{
    int i, free_slot = -1;

    for (i = 0; i < MAX_FLOWS; i++) {
        if (g_flows[i].used &&
            memcmp(&g_flows[i].key, key, sizeof(*key)) == 0)
            return &g_flows[i].state;
        if (!g_flows[i].used && free_slot < 0)
            free_slot = i;
    }
    if (free_slot < 0)
        return NULL;
    g_flows[free_slot].used = 1;
    g_flows[free_slot].key = *key;
    memset(&g_flows[free_slot].state, 0, sizeof(struct ms_flow_state));
    return &g_flows[free_slot].state;
}

static void flow_delete(const struct ms_flow_key *key)
{
    int i;

    for (i = 0; i < MAX_FLOWS; i++) {
        if (g_flows[i].used &&
            memcmp(&g_flows[i].key, key, sizeof(*key)) == 0)
            g_flows[i].used = 0;
    }
}

/* ---- classic pcap ------------------------------------------------------ */

struct pcap_pkt {
    uint32_t ts_sec;
    uint32_t ts_usec;
    uint32_t len;
    uint8_t *data;
};

static uint32_t rd32(const uint8_t *p, int swap)
{
    uint32_t v = ms_le32(p);

    return swap ? __builtin_bswap32(v) : v;
}

static int pcap_read(const char *path, struct pcap_pkt *out, int cap)
{
    FILE *f = fopen(path, "rb");
    uint8_t *blob;
    long size;
    long pos = 24;
    int swap, count = 0;

    if (!f)
        return -1;
    fseek(f, 0, SEEK_END);
    size = ftell(f);
    fseek(f, 0, SEEK_SET);
    if (size < 24) {
        fclose(f);
        return -1;
    }
    blob = malloc((size_t)size);
    if (!blob || fread(blob, 1, (size_t)size, f) != (size_t)size) {
        free(blob);
        fclose(f);
        return -1;
    }
    fclose(f);

    if (ms_le32(blob) == 0xA1B2C3D4u)
        swap = 0;
    else if (__builtin_bswap32(ms_le32(blob)) == 0xA1B2C3D4u)
        swap = 1;
    else
        goto fail;
    if (rd32(blob + 20, swap) != 1)   /* Ethernet link type only */
        goto fail;
    while (pos < size) {
        uint32_t caplen;

        if (size - pos < 16 || count >= cap)
            goto fail;
        out[count].ts_sec = rd32(blob + pos, swap);
        out[count].ts_usec = rd32(blob + pos + 4, swap);
        caplen = rd32(blob + pos + 8, swap);
        pos += 16;
        if ((long)caplen > size - pos)
            goto fail;
        out[count].len = caplen;
        out[count].data = malloc(caplen ? caplen : 1);
        if (!out[count].data)
            goto fail;
        memcpy(out[count].data, blob + pos, caplen);
        pos += caplen;
        count++;
    }
    free(blob);
    return count;
fail:
    free(blob);
    return -1;
}

static void wr32(FILE *f, uint32_t v)
{
    uint8_t b[4];

    ms_put_le32(b, v);
    fwrite(b, 1, 4, f);
}

static int pcap_write(const char *path, const struct pcap_pkt *pkts, int n)
{
    FILE *f = fopen(path, "wb");
    int i;

    if (!f)
        return -1;
    wr32(f, 0xA1B2C3D4u);
    wr32(f, 2u | (4u << 16));   /* version 2.4, little-endian halves */
    wr32(f, 0);                 /* thiszone */
    wr32(f, 0);                 /* sigfigs */
    wr32(f, 65535);             /* snaplen */
    wr32(f, 1);                 /* Ethernet */
    for (i = 0; i < n; i++) {
        wr32(f, pkts[i].ts_sec);
        wr32(f, pkts[i].ts_usec);
        wr32(f, pkts[i].len);
        wr32(f, pkts[i].len);
        fwrite(pkts[i].data, 1, pkts[i].len, f);
    }
    return fclose(f) == 0 ? 0 : -1;
}

/* ---- per-frame processing --------------------------------------------- */

static struct ms_counters g_ctr;

/*
 * Run one frame through the datapath; returns the verdict and mutates
 * the frame in place only on MS_PASS. The parse/passthrough/abort
 * split mirrors the reference engine: non-IPv4/TCP frames pass
 * untouched, IPv4/TCP frames whose declared lengths exceed the buffer
 * abort.
 */
static int process_frame(const struct ms_cfg *cfg, uint8_t *buf, uint32_t len)
{
    uint32_t ihl, ip_total, l4_off, doff, payload_off, plen, seq;
    uint16_t sport, dport, csum;
    uint8_t flags, dir_byte;
    const struct ms_key_val *keyrec;
    struct ms_flow_key fkey;
    struct ms_flow_state *st;
    int verdict;

    g_ctr.frames_total++;

    if (len < ETH_HLEN || ms_be16(buf + 12) != ETHERTYPE_IPV4)
        goto passthrough;
    if (len < ETH_HLEN + 20)
        goto abort_malformed;
    if ((buf[ETH_HLEN] >> 4) != 4 || buf[ETH_HLEN + 9] != IPPROTO_TCP_N)
        goto passthrough;
    if (len < ETH_HLEN + 20 + 20)
        goto abort_malformed;
    ihl = (uint32_t)(buf[ETH_HLEN] & 0x0F) * 4;
    if (ihl < 20)
        goto abort_malformed;
    ip_total = ms_be16(buf + ETH_HLEN + 2);
    if (ETH_HLEN + ip_total > len)
        goto abort_malformed;
    l4_off = ETH_HLEN + ihl;
    doff = (uint32_t)(buf[l4_off + 12] >> 4) * 4;
    if (doff < 20 || l4_off + doff > ETH_HLEN + ip_total)
        goto abort_malformed;
    payload_off = l4_off + doff;
    plen = ETH_HLEN + ip_total - payload_off;

    sport = ms_be16(buf + l4_off);
    dport = ms_be16(buf + l4_off + 2);
    if (sport != cfg->modbus_port && dport != cfg->modbus_port)
        goto passthrough;

    keyrec = keystore_lookup(ms_load_net32(buf + ETH_HLEN + 12),
                             ms_load_net32(buf + ETH_HLEN + 16),
                             cfg->modbus_port);
    if (!keyrec) {
        if (cfg->policy_default == MS_POLICY_STRICT) {
            g_ctr.drops_policy++;
            return MS_DROP;
        }
        g_ctr.frames_modbus++;
        return MS_PASS;
    }

    memset(&fkey, 0, sizeof(fkey));
    fkey.saddr = ms_load_net32(buf + ETH_HLEN + 12);
    fkey.daddr = ms_load_net32(buf + ETH_HLEN + 16);
    fkey.sport = sport;
    fkey.dport = dport;
    fkey.proto = IPPROTO_TCP_N;

    seq = ms_be32(buf + l4_off + 4);
    flags = buf[l4_off + 13];
    if ((flags & (TCP_FLAG_SYN | TCP_FLAG_FIN | TCP_FLAG_RST)) || plen == 0) {
        if (flags & TCP_FLAG_SYN) {
            st = flow_get_or_create(&fkey);
            if (!st)
                goto abort_malformed;
            ms_flow_init_syn(st, seq);
        } else if (flags & (TCP_FLAG_FIN | TCP_FLAG_RST)) {
            flow_delete(&fkey);
        }
        g_ctr.frames_modbus++;
        return MS_PASS;
    }

    st = flow_get_or_create(&fkey);
    if (!st)
        goto abort_malformed;

    dir_byte = dport == cfg->modbus_port ? 0 : 1;
    csum = ms_be16(buf + l4_off + 16);
    {
        static struct ms_plan plan;

        verdict = ms_process_data(cfg, st, keyrec, dir_byte, seq,
                                  buf + payload_off, plen, &csum, &plan,
                                  &g_ctr);
    }
    if (verdict == MS_PASS) {
        buf[l4_off + 16] = (uint8_t)(csum >> 8);
        buf[l4_off + 17] = (uint8_t)csum;
    }
    return verdict;

passthrough:
    g_ctr.passthrough_non_modbus++;
    return MS_PASS;
abort_malformed:
    g_ctr.aborts_malformed++;
    return MS_ABORT;
}

/* ---- entry point ------------------------------------------------------- */

static int usage(void)
{
    fprintf(stderr,
            "usage: msdp (seal|open) --pcap-in F --pcap-out F --keys F "
            "[--magic HEX16] [--policy strict|permissive]\n");
    return 2;
}

int main(int argc, char **argv)
{
    const char *pcap_in = NULL, *pcap_out = NULL, *keys = NULL;
    const char *magic_s = "0E0B", *policy_s = "permissive";
    struct ms_cfg cfg;
    static struct pcap_pkt pkts[MAX_PACKETS];
    static struct pcap_pkt out[MAX_PACKETS];
    char errbuf[256];
    int i, n, n_out = 0;
    long dropped = 0;

    if (argc < 2)
        return usage();
    memset(&cfg, 0, sizeof(cfg));
    cfg.magic_pid = MS_DEFAULT_MAGIC_PID;
    cfg.modbus_port = MS_DEFAULT_PORT;
    cfg.max_adus = MS_MAX_ADUS;
    if (strcmp(argv[1], "seal") == 0)
        cfg.direction = MS_DIR_EGRESS;
    else if (strcmp(argv[1], "open") == 0)
        cfg.direction = MS_DIR_INGRESS;
    else
        return usage();

    for (i = 2; i < argc; i++) {
        if (strcmp(argv[i], "--pcap-in") == 0 && i + 1 < argc)
            pcap_in = argv[++i];
        else if (strcmp(argv[i], "--pcap-out") == 0 && i + 1 < argc)
            pcap_out = argv[++i];
        else if (strcmp(argv[i], "--keys") == 0 && i + 1 < argc)
            keys = argv[++i];
        else if (strcmp(argv[i], "--magic") == 0 && i + 1 < argc)
            magic_s = argv[++i];
        else if (strcmp(argv[i], "--policy") == 0 && i + 1 < argc)
            policy_s = argv[++i];
        else
            return usage();
    }
    if (!pcap_in || !pcap_out || !keys)
        return usage();

    cfg.magic_pid = (uint16_t)strtoul(magic_s, NULL, 16);
    if (cfg.magic_pid == 0) {
        fprintf(stderr, "error: magic protocol id must differ from 0x0000\n");
        return 1;
    }
    if (strcmp(policy_s, "strict") == 0) {
        cfg.policy_default = MS_POLICY_STRICT;
    } else if (strcmp(policy_s, "permissive") == 0) {
        cfg.policy_default = MS_POLICY_PERMISSIVE;
    } else {
        return usage();
    }

    g_nkeys = ms_keyfile_load(keys, g_keys, MAX_KEYS, errbuf, sizeof(errbuf));
    if (g_nkeys < 0) {
        fprintf(stderr, "error: %s\n", errbuf);
        return 1;
    }
    n = pcap_read(pcap_in, pkts, MAX_PACKETS);
    if (n < 0) {
        fprintf(stderr, "error: cannot read %s\n", pcap_in);
        return 1;
    }

    for (i = 0; i < n; i++) {
        if (process_frame(&cfg, pkts[i].data, pkts[i].len) == MS_PASS)
            out[n_out++] = pkts[i];
        else
            dropped++;
    }
    if (pcap_write(pcap_out, out, n_out) != 0) {
        fprintf(stderr, "error: cannot write %s\n", pcap_out);
        return 1;
    }

    printf("frames_total=%llu frames_modbus=%llu "
           "adus_encrypted=%llu adus_decrypted=%llu "
           "drops_out_of_order=%llu drops_policy=%llu "
           "drops_header_split=%llu aborts_malformed=%llu "
           "passthrough_non_modbus=%llu dropped=%ld\n",
           (unsigned long long)g_ctr.frames_total,
           (unsigned long long)g_ctr.frames_modbus,
           (unsigned long long)g_ctr.adus_encrypted,
           (unsigned long long)g_ctr.adus_decrypted,
           (unsigned long long)g_ctr.drops_out_of_order,
           (unsigned long long)g_ctr.drops_policy,
           (unsigned long long)g_ctr.drops_header_split,
           (unsigned long long)g_ctr.aborts_malformed,
           (unsigned long long)g_ctr.passthrough_non_modbus,
           dropped);
    return 0;
}
